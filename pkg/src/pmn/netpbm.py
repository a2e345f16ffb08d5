"""Binary PGM (P5) and PPM (P6) reading and writing, 8- or 16-bit."""

from __future__ import annotations

import os

import numpy as np

from .errors import FormatError


def _tokens(data: bytes, count: int, pos: int) -> tuple[list[int], int]:
    out = []
    n = len(data)
    while len(out) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated header")
        try:
            out.append(int(data[start:pos]))
        except ValueError:
            raise FormatError(f"bad header token {data[start:pos]!r}") from None
    return out, pos + 1  # single whitespace byte before raster


def read_pnm(path: str | os.PathLike) -> tuple[np.ndarray, int]:
    """Raw raster (uint8 or uint16) and its maxval; shape ``(H, W)`` or ``(H, W, 3)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported magic {magic!r} (need P5 or P6)")
    (w, h, maxval), pos = _tokens(data, 3, 2)
    if w < 1 or h < 1 or not 1 <= maxval <= 65535:
        raise FormatError(f"{path}: bad header values {w}x{h} maxval {maxval}")
    ch = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    nbytes = w * h * ch * dtype.itemsize
    if len(data) < pos + nbytes:
        raise FormatError(f"{path}: raster truncated")
    arr = np.frombuffer(data, dtype=dtype, count=w * h * ch, offset=pos).astype(
        np.uint16 if maxval > 255 else np.uint8
    )
    return arr.reshape((h, w, 3) if ch == 3 else (h, w)), maxval


def read_image(path: str | os.PathLike) -> np.ndarray:
    """Float image in [0, 1]: ``(H, W, 3)`` for PPM, ``(H, W)`` for PGM."""
    arr, maxval = read_pnm(path)
    return arr.astype(np.float64) / maxval


def write_pgm(path: str | os.PathLike, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise FormatError(f"PGM needs a 2-D array, got shape {arr.shape}")
    maxval = 65535 if arr.dtype == np.uint16 else 255
    raster = arr.astype(">u2" if maxval > 255 else "u1").tobytes()
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n%d\n" % (arr.shape[1], arr.shape[0], maxval) + raster)


def write_ppm(path: str | os.PathLike, image: np.ndarray) -> None:
    """Write a float RGB image in [0, 1] (or uint8) as 8-bit P6."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise FormatError(f"PPM needs an H x W x 3 array, got shape {image.shape}")
    if image.dtype != np.uint8:
        image = np.round(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (image.shape[1], image.shape[0]) + image.tobytes())

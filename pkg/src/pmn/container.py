"""Binary container for named tensors (features, weights, debug dumps).

Layout, all little-endian::

    b"PMNTNSR1"                      8-byte magic
    uint32                           manifest length in bytes
    manifest                         UTF-8, one line per tensor: "<name> <dtype> <d0,d1,...>"
    payloads                         raw tensor bytes in manifest order
    uint32                           CRC-32 of the concatenated payload bytes

A scalar tensor is written with the shape field ``-``.
"""

from __future__ import annotations

import os
import struct
import zlib
from typing import Mapping

import numpy as np

from .errors import FormatError

MAGIC = b"PMNTNSR1"
DTYPES = {"f8": "<f8", "f4": "<f4", "i8": "<i8", "i4": "<i4", "u2": "<u2", "u1": "<u1"}
_CODES = {np.dtype(v): k for k, v in DTYPES.items()}


def dumps(tensors: Mapping[str, np.ndarray]) -> bytes:
    lines, payload = [], []
    for name, arr in tensors.items():
        if not name or any(c.isspace() for c in name):
            raise FormatError(f"tensor name {name!r} must be non-empty without whitespace")
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype.newbyteorder("<"))
        if code is None:
            raise FormatError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        shape = ",".join(str(d) for d in arr.shape) or "-"
        lines.append(f"{name} {code} {shape}")
        payload.append(np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes())
    manifest = "\n".join(lines).encode("utf-8")
    body = b"".join(payload)
    return (
        MAGIC
        + struct.pack("<I", len(manifest))
        + manifest
        + body
        + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    )


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < len(MAGIC) or blob[: len(MAGIC)] != MAGIC:
        raise FormatError("bad magic: not a PMNTNSR1 container")
    pos = len(MAGIC)
    if len(blob) < pos + 4:
        raise FormatError("truncated manifest length")
    (mlen,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    if len(blob) < pos + mlen:
        raise FormatError("truncated manifest")
    try:
        manifest = blob[pos : pos + mlen].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"manifest is not UTF-8: {exc}") from None
    pos += mlen

    entries = []
    for lineno, line in enumerate(filter(None, manifest.split("\n"))):
        parts = line.split(" ")
        if len(parts) != 3:
            raise FormatError(f"manifest line {lineno}: expected 'name dtype shape', got {line!r}")
        name, code, shape_s = parts
        if code not in DTYPES:
            raise FormatError(f"manifest line {lineno}: unknown dtype {code!r} for {name!r}")
        try:
            shape = () if shape_s == "-" else tuple(int(d) for d in shape_s.split(","))
        except ValueError:
            raise FormatError(f"manifest line {lineno}: bad shape {shape_s!r} for {name!r}") from None
        if any(d < 0 for d in shape):
            raise FormatError(f"manifest line {lineno}: negative shape for {name!r}")
        entries.append((name, np.dtype(DTYPES[code]), shape))

    start = pos
    out: dict[str, np.ndarray] = {}
    for name, dtype, shape in entries:
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if len(blob) < pos + nbytes + 4:
            raise FormatError(f"payload truncated in tensor {name!r}")
        out[name] = np.frombuffer(blob, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos).reshape(shape).copy()
        pos += nbytes
    if len(blob) != pos + 4:
        raise FormatError(f"payload size mismatch: {len(blob) - pos - 4} trailing bytes")
    (crc,) = struct.unpack_from("<I", blob, pos)
    if crc != zlib.crc32(blob[start:pos]) & 0xFFFFFFFF:
        raise FormatError("checksum mismatch: payload CRC-32 does not match")
    return out


def save(path: str | os.PathLike, tensors: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(tensors))


def load(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return loads(fh.read())

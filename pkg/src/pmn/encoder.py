"""Feature extraction: the backbone substitute and the feature-file loader.

Any callable ``extract(image, stream) -> FeaturePyramid`` can drive the
pipeline. :func:`handcrafted_features` is the built-in deterministic one.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from skimage.color import rgb2lab

from . import container
from .errors import DimensionError, FormatError

SCALES = (4, 8, 16)
BASE_CHANNELS = ("L", "a", "b", "grad_x", "grad_y", "variance")


@dataclass(frozen=True)
class FeaturePyramid:
    e1: np.ndarray  # (C1, H/4, W/4)
    e2: np.ndarray  # (C2, H/8, W/8)
    e3: np.ndarray  # (C3, H/16, W/16)
    source: str = "handcrafted"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("e1", "e2", "e3"):
            arr = getattr(self, name)
            if arr.ndim != 3:
                raise DimensionError(f"{name} must be C x h x w, got shape {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise DimensionError(f"{name} contains non-finite values")
        h1, w1 = self.e1.shape[1:]
        if self.e2.shape[1:] != (h1 // 2, w1 // 2) or self.e3.shape[1:] != (h1 // 4, w1 // 4):
            raise DimensionError(
                f"pyramid scales inconsistent: {self.e1.shape}, {self.e2.shape}, {self.e3.shape}"
            )

    @property
    def levels(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.e1, self.e2, self.e3

    @property
    def channels(self) -> tuple[int, int, int]:
        return tuple(e.shape[0] for e in self.levels)

    @property
    def image_size(self) -> tuple[int, int]:
        return self.e1.shape[1] * 4, self.e1.shape[2] * 4


def check_size(h: int, w: int) -> None:
    if h < 16 or w < 16 or h % 16 or w % 16:
        raise DimensionError(f"image size {h}x{w} must be a positive multiple of 16")


def avg_pool(x: np.ndarray, k: int) -> np.ndarray:
    """Non-overlapping ``k x k`` mean pooling of a ``(..., H, W)`` array."""
    h, w = x.shape[-2:]
    return x.reshape(*x.shape[:-2], h // k, k, w // k, k).mean(axis=(-3, -1))


def base_maps(image: np.ndarray) -> np.ndarray:
    """Six full-resolution maps: scaled CIELAB, |Sobel x|, |Sobel y|, 3x3 variance of L."""
    lab = rgb2lab(np.clip(image, 0.0, 1.0))
    lum = lab[..., 0] / 100.0
    gx = np.abs(ndimage.sobel(lum, axis=1, mode="nearest"))
    gy = np.abs(ndimage.sobel(lum, axis=0, mode="nearest"))
    mean = ndimage.uniform_filter(lum, 3, mode="nearest")
    var = np.maximum(ndimage.uniform_filter(lum**2, 3, mode="nearest") - mean**2, 0.0)
    return np.stack([lum, lab[..., 1] / 128.0, lab[..., 2] / 128.0, gx, gy, var])


def handcrafted_features(image, channels=(16, 16, 16), stream: str | None = None) -> FeaturePyramid:
    """Deterministic pyramid at strides 4, 8 and 16.

    Channel ``c`` of every level repeats base map ``c % 6`` (order as in
    ``BASE_CHANNELS``), pooled over the level's stride.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise DimensionError(f"expected an H x W x 3 image, got shape {image.shape}")
    check_size(*image.shape[:2])
    base = base_maps(image)
    levels = []
    for k, c in zip(SCALES, channels):
        pooled = avg_pool(base, k)
        levels.append(pooled[np.arange(c) % len(base)])
    return FeaturePyramid(*levels, source="handcrafted", meta={"stream": stream})


class HandcraftedExtractor:
    """Callable adapter so the pipeline can treat extractors uniformly."""

    def __init__(self, channels=(16, 16, 16)):
        self.channels = tuple(channels)

    def __call__(self, image, stream: str) -> FeaturePyramid:
        return handcrafted_features(image, self.channels, stream)


def save_features(path: str | os.PathLike, pyramid: FeaturePyramid) -> None:
    container.save(path, {"e1": pyramid.e1, "e2": pyramid.e2, "e3": pyramid.e3})


def load_features(path: str | os.PathLike) -> FeaturePyramid:
    tensors = container.load(path)
    for name in ("e1", "e2", "e3"):
        if name not in tensors:
            raise FormatError(f"missing tensor {name!r}")
        if tensors[name].ndim != 3:
            raise FormatError(f"tensor {name!r} must have 3 dimensions, got {tensors[name].shape}")
    try:
        return FeaturePyramid(
            tensors["e1"].astype(np.float64),
            tensors["e2"].astype(np.float64),
            tensors["e3"].astype(np.float64),
            source="file",
            meta={"path": str(path)},
        )
    except DimensionError as exc:
        raise FormatError(f"shape: {exc}") from None

"""Prototype generation: pyramid fusion and masked average pooling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError, PreconditionError
from .numerics import LinearParams, bilinear_resize, conv1x1, mm
from .slic import MaskStack


@dataclass(frozen=True)
class PgmWeights:
    """One 1x1 projection per pyramid level, all to the common width C."""

    levels: tuple[LinearParams, LinearParams, LinearParams]

    @property
    def width(self) -> int:
        return self.levels[0].out_features


@dataclass(frozen=True)
class PrototypeSet:
    vectors: np.ndarray  # (..., n, C)
    origin: str
    indices: np.ndarray  # superpixel label of each row

    def __len__(self) -> int:
        return self.vectors.shape[-2]


def _levels(pyramid):
    return pyramid.levels if hasattr(pyramid, "levels") else tuple(pyramid)


def fuse_pyramid(pyramid, weights: PgmWeights) -> np.ndarray:
    """Project each level to width C, resample to the stride-8 grid and sum."""
    levels = _levels(pyramid)
    if len(levels) != 3 or len(weights.levels) != 3:
        raise ConfigurationError("fusion expects exactly three pyramid levels")
    widths = {p.out_features for p in weights.levels}
    if len(widths) != 1:
        raise ConfigurationError(f"level projections disagree on output width: {sorted(widths)}")
    h, w = levels[1].shape[-2:]
    out = 0.0
    for i, (feat, p) in enumerate(zip(levels, weights.levels)):
        if feat.shape[-3] != p.in_features:
            raise ConfigurationError(
                f"level {i + 1} has {feat.shape[-3]} channels but weights expect {p.in_features}"
            )
        out = out + bilinear_resize(conv1x1(feat, p), h, w)
    return out


def generate_prototypes(E: np.ndarray, masks: MaskStack) -> PrototypeSet:
    """Mean of ``E`` over each mask's pixels; ``E`` is ``(..., C, h, w)``."""
    m = masks.masks
    if m.shape[-2:] != E.shape[-2:]:
        raise DimensionError(f"mask size {m.shape[-2:]} != feature size {E.shape[-2:]}")
    counts = m.reshape(len(m), -1).sum(axis=1)
    if np.any(counts == 0):
        raise PreconditionError("empty mask reached prototype generation")
    h, w = E.shape[-2:]
    flat = E.reshape(*E.shape[:-2], h * w)
    sums = mm(flat, m.reshape(len(m), -1).T.astype(E.dtype))  # (..., C, n)
    vectors = np.swapaxes(sums / counts, -1, -2)
    return PrototypeSet(vectors, masks.source, masks.indices)


def gap_prototypes(E: np.ndarray, masks: MaskStack) -> np.ndarray:
    """Prototypes in the global-average-pooling form: ``hw / sum(M) * GAP(M * E)``.

    Algebraically identical to :func:`generate_prototypes`; kept as a cross-check.
    """
    h, w = E.shape[-2:]
    rows = []
    for mask in masks.masks:
        gap = (E * mask).mean(axis=(-2, -1))
        rows.append(h * w / mask.sum() * gap)
    return np.stack(rows, axis=-2)

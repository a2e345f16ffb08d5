"""Correlation maps between projected encoder features and stored prototypes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, PreconditionError
from .numerics import LinearParams, conv1x1, cosine_map


@dataclass(frozen=True)
class CmgmWeights:
    levels: tuple[LinearParams, LinearParams, LinearParams]


@dataclass(frozen=True)
class CorrelationMaps:
    """``tau[r]`` is ``(..., k, h_r, w_r)``; channels past ``used`` are zero."""

    tau: tuple[np.ndarray, np.ndarray, np.ndarray]
    used: int

    @property
    def channels(self) -> int:
        return self.tau[0].shape[-3]


def project_features(pyramid, weights: CmgmWeights) -> tuple[np.ndarray, ...]:
    levels = pyramid.levels if hasattr(pyramid, "levels") else tuple(pyramid)
    if len(levels) != len(weights.levels):
        raise ConfigurationError(f"{len(levels)} pyramid levels but {len(weights.levels)} projections")
    out = []
    for i, (feat, p) in enumerate(zip(levels, weights.levels)):
        if feat.shape[-3] != p.in_features:
            raise ConfigurationError(
                f"level {i + 1} has {feat.shape[-3]} channels but projection expects {p.in_features}"
            )
        out.append(conv1x1(feat, p))
    return tuple(out)


def correlation_maps(projected, prototypes, k: int) -> CorrelationMaps:
    """Cosine similarity of every pixel with each prototype, padded to ``k`` channels.

    ``prototypes`` is a :class:`~pmn.psm.MemoryBank` or a ``(..., n, C)``
    array in channel order. Only the first ``k`` prototypes are used.
    """
    vectors = prototypes.vectors if hasattr(prototypes, "vectors") else np.asarray(prototypes)
    n = vectors.shape[-2]
    if n == 0:
        raise PreconditionError("correlation maps need at least one prototype")
    vectors = vectors[..., :k, :]
    used = vectors.shape[-2]
    taus = []
    for feat in projected:
        if feat.shape[-3] != vectors.shape[-1]:
            raise ConfigurationError(
                f"feature width {feat.shape[-3]} != prototype width {vectors.shape[-1]}"
            )
        t = cosine_map(feat, vectors)
        if used < k:
            pad = [(0, 0)] * t.ndim
            pad[-3] = (0, k - used)
            t = np.pad(t, pad)
        taus.append(t)
    return CorrelationMaps(tuple(taus), used)

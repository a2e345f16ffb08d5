"""Prototype scoring and the top-K prototype memory bank.

A frame's prototypes are stacked on top of the bank's stored prototypes,
scored jointly, rescaled by their scores, and the best ``k`` rows become
the next bank. Banks are immutable values; every update returns a new one.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, DimensionError, ParameterError
from .numerics import AttentionParams, LinearParams, gelu, layer_norm, linear_map, multi_head_attention, sigmoid
from .pgm import PrototypeSet


@dataclass(frozen=True)
class PsmWeights:
    norm1_scale: np.ndarray
    norm1_shift: np.ndarray
    attention: AttentionParams
    norm2_scale: np.ndarray
    norm2_shift: np.ndarray
    fc1: LinearParams
    fc2: LinearParams

    @property
    def width(self) -> int:
        return self.fc2.out_features


@dataclass(frozen=True)
class MemoryBank:
    """Stored prototypes in descending score order (stable w.r.t. insertion)."""

    vectors: np.ndarray  # (..., k', C)
    scores: np.ndarray  # (..., k')
    sequence_id: str = ""
    stream: str = "rgb"

    @classmethod
    def empty(cls, width: int, sequence_id: str = "", stream: str = "rgb") -> "MemoryBank":
        return cls(np.zeros((0, width)), np.zeros((0,)), sequence_id, stream)

    def __len__(self) -> int:
        return self.vectors.shape[-2]

    @property
    def width(self) -> int:
        return self.vectors.shape[-1]


@dataclass(frozen=True)
class PrototypeBlock:
    rows: np.ndarray  # (..., n_new + n_mem, C)
    provenance: tuple  # ("new", i) or ("memory", slot) per row
    n_new: int

    def __len__(self) -> int:
        return self.rows.shape[-2]


def _broadcast_concat(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    lead = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    a = np.broadcast_to(a, lead + a.shape[-2:])
    b = np.broadcast_to(b, lead + b.shape[-2:])
    return np.concatenate([a, b], axis=-2)


def build_block(new: PrototypeSet, bank: MemoryBank) -> PrototypeBlock:
    if new.origin != bank.stream:
        raise ConfigurationError(f"prototype stream {new.origin!r} != bank stream {bank.stream!r}")
    if new.vectors.shape[-1] != bank.width:
        raise ConfigurationError(f"prototype width {new.vectors.shape[-1]} != bank width {bank.width}")
    n_new, n_mem = len(new), len(bank)
    if n_new + n_mem == 0:
        raise ParameterError("prototype block would be empty")
    rows = _broadcast_concat(new.vectors, bank.vectors)
    prov = tuple(("new", i) for i in range(n_new)) + tuple(("memory", j) for j in range(n_mem))
    return PrototypeBlock(rows, prov, n_new)


def _rows(pb) -> np.ndarray:
    rows = pb.rows if isinstance(pb, PrototypeBlock) else np.asarray(pb, dtype=np.float64)
    if rows.ndim < 2 or rows.shape[-2] < 1:
        raise DimensionError(f"block needs at least one row, got shape {rows.shape}")
    return rows


def _mlp(x: np.ndarray, w: PsmWeights) -> np.ndarray:
    return linear_map(gelu(linear_map(x, w.fc1)), w.fc2)


def score_block(pb, w: PsmWeights, residuals: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Single transformer block followed by sigmoid and channel max-pooling.

    Returns the sigmoid output (same shape as the block) and the sampling
    vector with one score in [0, 1] per row.
    """
    x = _rows(pb)
    if x.shape[-1] != w.width:
        raise DimensionError(f"block width {x.shape[-1]} != scorer width {w.width}")
    x1 = layer_norm(x, w.norm1_scale, w.norm1_shift)
    a = multi_head_attention(x1, w.attention)
    x2 = x1 + a if residuals else a
    x3 = layer_norm(x2, w.norm2_scale, w.norm2_shift)
    m = _mlp(x3, w)
    x4 = x3 + m if residuals else m
    g = sigmoid(x4)
    return g, g.max(axis=-1)


def score_block_mlp(pb, w: PsmWeights, residuals: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Attention-free scorer: LayerNorm, MLP, sigmoid, channel max-pooling.

    Rows are scored independently of each other. Uses the first norm and the
    MLP of ``w``; the attention parameters are ignored.
    """
    x = _rows(pb)
    if x.shape[-1] != w.width:
        raise DimensionError(f"block width {x.shape[-1]} != scorer width {w.width}")
    x1 = layer_norm(x, w.norm1_scale, w.norm1_shift)
    m = _mlp(x1, w)
    g = sigmoid(x1 + m if residuals else m)
    return g, g.max(axis=-1)


def sample_block(pb, upsilon: np.ndarray) -> np.ndarray:
    """Scale each input row by its score."""
    rows = _rows(pb)
    if upsilon.shape[-1] != rows.shape[-2]:
        raise DimensionError(f"{upsilon.shape[-1]} scores for {rows.shape[-2]} rows")
    return upsilon[..., :, None] * rows


def top_k_order(upsilon: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest scores, descending; ties keep the lower index."""
    return np.argsort(-upsilon, axis=-1, kind="stable")[..., :k]


def update_memory(bank: MemoryBank, spb: np.ndarray, upsilon: np.ndarray, k: int, stored_rows=None) -> MemoryBank:
    """New bank holding the top-``k`` rows of ``spb`` by score.

    ``stored_rows`` optionally replaces ``spb`` as the source of the stored
    vectors (the unscaled-storage ablation); selection still uses ``upsilon``.
    """
    if k <= 0:
        raise ParameterError(f"memory size must be positive, got {k}")
    if spb.shape[-2] != upsilon.shape[-1]:
        raise DimensionError(f"{upsilon.shape[-1]} scores for {spb.shape[-2]} rows")
    src = spb if stored_rows is None else stored_rows
    order = top_k_order(upsilon, k)
    vectors = np.take_along_axis(src, order[..., None], axis=-2)
    scores = np.take_along_axis(upsilon, order, axis=-1)
    return replace(bank, vectors=vectors, scores=scores)


def reset_memory(bank: MemoryBank) -> MemoryBank:
    return MemoryBank.empty(bank.width, bank.sequence_id, bank.stream)

"""Dense forward kernels on numpy arrays.

Every array in the package is ``float64`` (see ``DTYPE``); all tolerances in
the tests assume that width.

The kernels broadcast over leading dimensions of both data and parameters.
A weight of shape ``(B, out, in)`` applied to data of shape ``(m, in)``
yields ``(B, m, out)``. The finite-difference trainer relies on this to
evaluate many parameter vectors in one pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import erf, expit

from .errors import ConfigurationError, DimensionError

DTYPE = np.float64
NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class LinearParams:
    """Affine map ``y = x W^T + b``; also serves as a 1x1 convolution."""

    weight: np.ndarray  # (..., out, in)
    bias: np.ndarray  # (..., out)

    def __post_init__(self):
        if self.weight.shape[-2] != self.bias.shape[-1]:
            raise DimensionError(
                f"weight rows {self.weight.shape[-2]} != bias length {self.bias.shape[-1]}"
            )

    @property
    def in_features(self) -> int:
        return self.weight.shape[-1]

    @property
    def out_features(self) -> int:
        return self.weight.shape[-2]


@dataclass(frozen=True)
class AttentionParams:
    query: LinearParams
    key: LinearParams
    value: LinearParams
    output: LinearParams
    heads: int

    def __post_init__(self):
        width = self.query.out_features
        if self.heads < 1 or width % self.heads:
            raise ConfigurationError(f"width {width} not divisible by {self.heads} heads")
        for name in ("key", "value"):
            p = getattr(self, name)
            if p.out_features != width or p.in_features != self.query.in_features:
                raise ConfigurationError(f"{name} projection shape mismatch")
        if self.output.in_features != width:
            raise ConfigurationError("output projection shape mismatch")


def as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=DTYPE)


def matmul(a, b) -> np.ndarray:
    a, b = as_array(a), as_array(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return a @ b


def mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a @ b`` that folds an unbatched operand into a single GEMM."""
    if b.ndim == 2 and a.ndim > 2:
        return (a.reshape(-1, a.shape[-1]) @ b).reshape(*a.shape[:-1], b.shape[-1])
    if a.ndim == 2 and b.ndim > 2:
        k, n = b.shape[-2:]
        out = a @ np.moveaxis(b, -2, 0).reshape(k, -1)
        return np.moveaxis(out.reshape(a.shape[0], *b.shape[:-2], n), 0, -2)
    return a @ b


def sigmoid(x) -> np.ndarray:
    return expit(as_array(x))


def relu(x) -> np.ndarray:
    return np.maximum(as_array(x), 0.0)


def gelu(x) -> np.ndarray:
    x = as_array(x)
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def softmax_rows(x) -> np.ndarray:
    x = as_array(x)
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def layer_norm(x, scale, shift, eps: float = 1e-5) -> np.ndarray:
    x = as_array(x)
    mean = x.mean(axis=-1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps) * scale[..., None, :] + shift[..., None, :]


def linear_map(x, p: LinearParams) -> np.ndarray:
    """Per-row affine map of ``x`` with shape ``(..., m, in)``."""
    x = as_array(x)
    if x.shape[-1] != p.in_features:
        raise DimensionError(f"input width {x.shape[-1]} != weight in_features {p.in_features}")
    return mm(x, np.swapaxes(p.weight, -1, -2)) + p.bias[..., None, :]


def conv1x1(x, p: LinearParams) -> np.ndarray:
    """Per-pixel affine map of a ``(..., C, h, w)`` volume."""
    x = as_array(x)
    if x.shape[-3] != p.in_features:
        raise DimensionError(f"input channels {x.shape[-3]} != weight in_features {p.in_features}")
    h, w = x.shape[-2:]
    flat = x.reshape(*x.shape[:-2], h * w)
    out = mm(p.weight, flat) + p.bias[..., :, None]
    return out.reshape(*out.shape[:-1], h, w)


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    # (..., m, C) -> (..., heads, m, C/heads)
    m, c = x.shape[-2:]
    return np.moveaxis(x.reshape(*x.shape[:-1], heads, c // heads), -2, -3)


def multi_head_attention(x, p: AttentionParams) -> np.ndarray:
    """Scaled dot-product self-attention over the rows of ``x``; no positional terms."""
    x = as_array(x)
    if x.shape[-2] < 1:
        raise DimensionError("attention needs at least one row")
    q = _split_heads(linear_map(x, p.query), p.heads)
    k = _split_heads(linear_map(x, p.key), p.heads)
    v = _split_heads(linear_map(x, p.value), p.heads)
    scale = 1.0 / math.sqrt(q.shape[-1])
    attn = softmax_rows((q @ np.swapaxes(k, -1, -2)) * scale)
    ctx = np.moveaxis(attn @ v, -3, -2)
    ctx = ctx.reshape(*ctx.shape[:-2], ctx.shape[-2] * ctx.shape[-1])
    return linear_map(ctx, p.output)


@lru_cache(maxsize=256)
def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row i holds the align-corners-false bilinear weights for output index i."""
    m = np.zeros((n_out, n_in), dtype=DTYPE)
    scale = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(math.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[i, i0] += 1.0 - frac
        m[i, i1] += frac
    m.setflags(write=False)
    return m


def bilinear_resize(x, out_h: int, out_w: int) -> np.ndarray:
    """Resize the last two axes with align-corners-false bilinear interpolation."""
    x = as_array(x)
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"target size must be positive, got {out_h}x{out_w}")
    h, w = x.shape[-2:]
    if h < 1 or w < 1:
        raise DimensionError(f"source size must be positive, got {h}x{w}")
    if (h, w) == (out_h, out_w):
        return x.copy()
    ry = _interp_matrix(h, out_h)
    rx = _interp_matrix(w, out_w)
    return mm(mm(ry, x), rx.T)


def cosine_similarity(u, v) -> float:
    """Cosine of the angle between two vectors; 0 when either is (near) zero."""
    u, v = as_array(u), as_array(v)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu < NORM_FLOOR or nv < NORM_FLOOR:
        return 0.0
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def cosine_map(features, prototypes) -> np.ndarray:
    """Cosine between every prototype and every pixel.

    ``features`` is ``(..., C, h, w)``, ``prototypes`` is ``(..., K, C)``;
    the result is ``(..., K, h, w)``. Zero-norm pixels or prototypes give 0.
    """
    features, prototypes = as_array(features), as_array(prototypes)
    if features.shape[-3] != prototypes.shape[-1]:
        raise DimensionError(
            f"feature width {features.shape[-3]} != prototype width {prototypes.shape[-1]}"
        )
    h, w = features.shape[-2:]
    flat = features.reshape(*features.shape[:-2], h * w)
    fn = np.linalg.norm(flat, axis=-2, keepdims=True)  # (..., 1, hw)
    pn = np.linalg.norm(prototypes, axis=-1)[..., None]  # (..., K, 1)
    dots = mm(prototypes, flat)
    ok = (pn >= NORM_FLOOR) & (fn >= NORM_FLOOR)
    out = np.where(ok, dots / np.where(ok, pn * fn, 1.0), 0.0)
    out = np.clip(out, -1.0, 1.0)
    return out.reshape(*out.shape[:-1], h, w)

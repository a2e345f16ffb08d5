"""Light decoder fusing the two streams' correlation maps into a soft mask.

Per scale: concatenate RGB and flow maps, 3x3 conv, ReLU. Then a top-down
pass adds each coarser map (1x1-aligned, upsampled x2) into the next finer
one, and a final 1x1 map plus sigmoid gives the mask, resized to H x W.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cmgm import CorrelationMaps
from .errors import ConfigurationError, DimensionError
from .numerics import LinearParams, bilinear_resize, conv1x1, mm, relu, sigmoid


@dataclass(frozen=True)
class DecoderWeights:
    kernels: tuple[np.ndarray, np.ndarray, np.ndarray]  # (..., D, 2K, 3, 3) per scale
    biases: tuple[np.ndarray, np.ndarray, np.ndarray]  # (..., D)
    merges: tuple[LinearParams, LinearParams]  # scale 3 -> 2, scale 2 -> 1
    head: LinearParams  # D -> 1

    @property
    def in_channels(self) -> int:
        return self.kernels[0].shape[-3]

    @property
    def width(self) -> int:
        return self.kernels[0].shape[-4]


@dataclass(frozen=True)
class SegMask:
    values: np.ndarray  # (..., H, W) in [0, 1]

    def binary(self, threshold: float = 0.5) -> np.ndarray:
        return self.values >= threshold

    def to_uint8(self) -> np.ndarray:
        return np.round(np.clip(self.values, 0.0, 1.0) * 255.0).astype(np.uint8)


def conv3x3(x, kernel, bias) -> np.ndarray:
    """Zero-padded, stride-1 3x3 cross-correlation of a ``(..., C_in, h, w)`` volume."""
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.shape[-2:] != (3, 3) or kernel.shape[-3] != x.shape[-3]:
        raise DimensionError(f"kernel {kernel.shape} does not fit input {x.shape}")
    if bias.shape[-1] != kernel.shape[-4]:
        raise DimensionError(f"bias length {bias.shape[-1]} != output channels {kernel.shape[-4]}")
    h, w = x.shape[-2:]
    if kernel.ndim == 4 and x.ndim > 3:
        return _conv3x3_taps(x, kernel, bias)
    pad = [(0, 0)] * (x.ndim - 2) + [(1, 1), (1, 1)]
    xp = np.pad(x, pad)
    # im2col: (..., C_in, 9, h*w) in the kernel's (dy, dx) order
    cols = np.stack(
        [xp[..., dy : dy + h, dx : dx + w] for dy in range(3) for dx in range(3)], axis=-3
    ).reshape(*x.shape[:-3], x.shape[-3] * 9, h * w)
    k2 = kernel.reshape(*kernel.shape[:-3], kernel.shape[-3] * 9)
    out = mm(k2, cols) + bias[..., :, None]
    return out.reshape(*out.shape[:-1], h, w)


def _conv3x3_taps(x, kernel, bias) -> np.ndarray:
    # shared kernel, batched data: one GEMM for all nine taps, then shift-add
    d, c = kernel.shape[:2]
    h, w = x.shape[-2:]
    taps = np.moveaxis(kernel, (2, 3), (0, 1)).reshape(9 * d, c)
    y = mm(taps, x.reshape(*x.shape[:-2], h * w)).reshape(*x.shape[:-3], 3, 3, d, h, w)
    yp = np.pad(y, [(0, 0)] * (y.ndim - 2) + [(1, 1), (1, 1)])
    out = np.broadcast_to(bias[:, None, None], (*x.shape[:-3], d, h, w)).copy()
    for dy in range(3):
        for dx in range(3):
            out += yp[..., dy, dx, :, dy : dy + h, dx : dx + w]
    return out


def _upsample2(x: np.ndarray) -> np.ndarray:
    return bilinear_resize(x, 2 * x.shape[-2], 2 * x.shape[-1])


def decode_logits(tau_rgb: CorrelationMaps, tau_flow: CorrelationMaps, w: DecoderWeights) -> np.ndarray:
    """Pre-sigmoid mask at the finest correlation scale, ``(..., h1, w1)``."""
    if len(tau_rgb.tau) != 3 or len(tau_flow.tau) != 3:
        raise ConfigurationError("decoder expects three correlation scales per stream")
    z = []
    for r, (a, b) in enumerate(zip(tau_rgb.tau, tau_flow.tau)):
        if a.shape[-2:] != b.shape[-2:]:
            raise ConfigurationError(f"scale {r + 1}: stream sizes {a.shape[-2:]} and {b.shape[-2:]} differ")
        lead = np.broadcast_shapes(a.shape[:-3], b.shape[:-3])
        a = np.broadcast_to(a, lead + a.shape[-3:])
        b = np.broadcast_to(b, lead + b.shape[-3:])
        x = np.concatenate([a, b], axis=-3)
        if x.shape[-3] != w.kernels[r].shape[-3]:
            raise ConfigurationError(
                f"scale {r + 1}: {x.shape[-3]} correlation channels, kernel expects {w.kernels[r].shape[-3]}"
            )
        z.append(relu(conv3x3(x, w.kernels[r], w.biases[r])))
    y = z[2]
    for finer, merge in ((z[1], w.merges[0]), (z[0], w.merges[1])):
        up = _upsample2(conv1x1(y, merge))
        if up.shape[-2:] != finer.shape[-2:]:
            raise ConfigurationError(f"scale sizes {finer.shape[-2:]} and {up.shape[-2:]} are not a 2x pyramid")
        y = finer + up
    return conv1x1(y, w.head)[..., 0, :, :]


def decode(tau_rgb: CorrelationMaps, tau_flow: CorrelationMaps, w: DecoderWeights, height: int, width: int) -> SegMask:
    probs = sigmoid(decode_logits(tau_rgb, tau_flow, w))
    return SegMask(np.clip(bilinear_resize(probs, height, width), 0.0, 1.0))

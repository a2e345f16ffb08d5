"""Synthetic moving-object sequences and the optical-flow color wheel."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

# Middlebury wheel segment lengths: red-yellow, yellow-green, green-cyan,
# cyan-blue, blue-magenta, magenta-red
_WHEEL_SEGMENTS = (15, 6, 4, 11, 13, 6)


def make_colorwheel() -> np.ndarray:
    """The 55-entry Middlebury flow color wheel, RGB in [0, 1]."""
    ry, yg, gc, cb, bm, mr = _WHEEL_SEGMENTS
    wheel = np.zeros((sum(_WHEEL_SEGMENTS), 3))
    col = 0
    wheel[col : col + ry, 0] = 255
    wheel[col : col + ry, 1] = np.floor(255 * np.arange(ry) / ry)
    col += ry
    wheel[col : col + yg, 0] = 255 - np.floor(255 * np.arange(yg) / yg)
    wheel[col : col + yg, 1] = 255
    col += yg
    wheel[col : col + gc, 1] = 255
    wheel[col : col + gc, 2] = np.floor(255 * np.arange(gc) / gc)
    col += gc
    wheel[col : col + cb, 1] = 255 - np.floor(255 * np.arange(cb) / cb)
    wheel[col : col + cb, 2] = 255
    col += cb
    wheel[col : col + bm, 2] = 255
    wheel[col : col + bm, 0] = np.floor(255 * np.arange(bm) / bm)
    col += bm
    wheel[col : col + mr, 2] = 255 - np.floor(255 * np.arange(mr) / mr)
    wheel[col : col + mr, 0] = 255
    return wheel / 255.0


def flow_to_color(u, v, max_flow: float = 4.0, zero_gray: float = 0.5) -> np.ndarray:
    """Encode displacement (u right, v down) as RGB in [0, 1].

    Hue follows direction on the Middlebury wheel; magnitudes blend from
    ``zero_gray`` at rest to the full wheel color at ``max_flow`` (clipped).
    """
    u, v = np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64)
    wheel = make_colorwheel()
    ncols = len(wheel)
    rad = np.minimum(np.hypot(u, v) / max_flow, 1.0)
    a = np.arctan2(-v, -u) / np.pi
    fk = (a + 1) / 2 * (ncols - 1)
    k0 = np.floor(fk).astype(int)
    k1 = (k0 + 1) % ncols
    f = (fk - k0)[..., None]
    col = (1 - f) * wheel[k0] + f * wheel[k1]
    return zero_gray * (1 - rad[..., None]) + rad[..., None] * col


@dataclass(frozen=True)
class ObjectSpec:
    """A rigid axis-aligned rectangle moving at constant velocity (pixels/frame)."""

    size: tuple[int, int] = (10, 10)
    color: tuple[float, float, float] = (0.9, 0.15, 0.1)
    start: tuple[float, float] = (4.0, 4.0)  # top-left (y, x)
    velocity: tuple[float, float] = (0.0, 2.0)  # (vy, vx)
    hidden: frozenset = field(default_factory=frozenset)  # frame indices where it is occluded


@dataclass
class SyntheticSequence:
    rgb: list  # T images, (H, W, 3)
    flow: list  # T - 1 color-coded flow images, (H, W, 3)
    gt: list  # T boolean masks
    name: str = "synthetic"


def textured_background(h: int, w: int, seed: int = 0) -> np.ndarray:
    """Smooth low-frequency color texture kept away from saturated reds."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    img = np.empty((h, w, 3))
    base = np.array([0.35, 0.5, 0.45])
    for c in range(3):
        acc = np.zeros((h, w))
        for _ in range(3):
            fy, fx = rng.uniform(1.0, 4.0, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            acc += np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)
        img[..., c] = base[c] + 0.12 * acc / 3
    return np.clip(img, 0.0, 1.0)


def _position(spec: ObjectSpec, t: int) -> tuple[int, int]:
    return (int(round(spec.start[0] + t * spec.velocity[0])), int(round(spec.start[1] + t * spec.velocity[1])))


def synth_generate(spec: ObjectSpec, frames: int, size=(64, 64), seed: int = 0, max_flow: float = 4.0) -> SyntheticSequence:
    """Render ``frames`` frames of ``spec`` over a static textured background."""
    h, w = size
    if frames < 1:
        raise ParameterError(f"need at least one frame, got {frames}")
    oh, ow = spec.size
    for t in range(frames):
        y, x = _position(spec, t)
        if y < 0 or x < 0 or y + oh > h or x + ow > w:
            raise ParameterError(f"object leaves the {h}x{w} frame at t={t} (top-left {y},{x})")
    bg = textured_background(h, w, seed)
    rgb, gt, flow = [], [], []
    for t in range(frames):
        img = bg.copy()
        mask = np.zeros((h, w), dtype=bool)
        if t not in spec.hidden:
            y, x = _position(spec, t)
            mask[y : y + oh, x : x + ow] = True
            img[mask] = spec.color
        rgb.append(img)
        gt.append(mask)
    for t in range(frames - 1):
        u = np.zeros((h, w))
        v = np.zeros((h, w))
        if t not in spec.hidden:
            (y0, x0), (y1, x1) = _position(spec, t), _position(spec, t + 1)
            u[gt[t]] = x1 - x0
            v[gt[t]] = y1 - y0
        flow.append(flow_to_color(u, v, max_flow))
    return SyntheticSequence(rgb, flow, gt)


def toy_scene(size: int = 32, frames: int = 8, seed: int = 0) -> SyntheticSequence:
    """The standard small training scene: one square drifting right and down."""
    s = size / 32
    spec = ObjectSpec(
        size=(int(10 * s), int(10 * s)),
        start=(6 * s, 3 * s),
        velocity=(1.0 * s, 2.0 * s),
    )
    seq = synth_generate(spec, frames, (size, size), seed)
    seq.name = "toy"
    return seq


def occlusion_scene(size: int = 32, frames: int = 8, seed: int = 0, hidden=(3, 4)) -> SyntheticSequence:
    """The toy scene with the object fully occluded on the ``hidden`` frames."""
    s = size / 32
    spec = ObjectSpec(
        size=(int(10 * s), int(10 * s)),
        start=(6 * s, 3 * s),
        velocity=(1.0 * s, 2.0 * s),
        hidden=frozenset(hidden),
    )
    seq = synth_generate(spec, frames, (size, size), seed)
    seq.name = "occlusion"
    return seq

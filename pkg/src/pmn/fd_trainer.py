"""Finite-difference gradient descent on the sequence IoU loss.

Intended for the toy configuration only (about 1.6k parameters). The loss
object evaluates many parameter vectors at once and reuses the cached
intermediates of the unperturbed run for every stage a perturbation does
not reach, which is what keeps a full central-difference sweep cheap.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import PipelineConfig
from .decoder import decode_logits
from .errors import NumericalError, ParameterError
from .metrics import iou_loss
from .numerics import bilinear_resize, sigmoid
from .pipeline import STREAMS, correlate_stage, new_state, prepare_sequence, select_stage
from .psm import MemoryBank
from .weights import ModelWeights, ParamVector, flatten, init_weights, unflatten

log = logging.getLogger(__name__)


def relative_step(theta: np.ndarray, rel: float = 1e-3, floor: float = 1e-4) -> np.ndarray:
    """Per-coordinate step ``max(rel * |theta_i|, floor)``."""
    return np.maximum(rel * np.abs(theta), floor)


def fd_gradient(loss, theta, eps=1e-4, batch_loss=None, chunk: int = 4096) -> np.ndarray:
    """Central-difference gradient of ``loss`` at ``theta``.

    ``eps`` is a scalar or per-coordinate step. If ``batch_loss`` is given it
    must map a ``(B, P)`` array of parameter vectors to ``B`` losses and is
    used instead of calling ``loss`` once per evaluation.
    """
    theta = np.asarray(theta, dtype=np.float64)
    p = theta.size
    steps = np.broadcast_to(np.asarray(eps, dtype=np.float64), (p,))
    if np.any(steps <= 0):
        raise ParameterError("finite-difference steps must be positive")
    grad = np.empty(p)
    if batch_loss is None:
        for i in range(p):
            up, down = theta.copy(), theta.copy()
            up[i] += steps[i]
            down[i] -= steps[i]
            fu, fd = loss(up), loss(down)
            if not (np.isfinite(fu) and np.isfinite(fd)):
                raise NumericalError(f"non-finite loss at coordinate {i}")
            grad[i] = (fu - fd) / (2 * steps[i])
        return grad
    for s in range(0, p, chunk):
        idx = np.arange(s, min(s + chunk, p))
        n = len(idx)
        thetas = np.repeat(theta[None, :], 2 * n, axis=0)
        thetas[np.arange(n), idx] += steps[idx]
        thetas[n + np.arange(n), idx] -= steps[idx]
        vals = np.asarray(batch_loss(thetas), dtype=np.float64)
        bad = ~np.isfinite(vals)
        if bad.any():
            raise NumericalError(f"non-finite loss at coordinate {idx[np.argmax(bad) % n]}")
        grad[idx] = (vals[:n] - vals[n:]) / (2 * steps[idx])
    return grad


def forward_difference(loss, theta, eps=1e-4) -> np.ndarray:
    """One-sided differences; a cross-check for :func:`fd_gradient`."""
    theta = np.asarray(theta, dtype=np.float64)
    steps = np.broadcast_to(np.asarray(eps, dtype=np.float64), theta.shape)
    f0 = loss(theta)
    grad = np.empty(theta.size)
    for i in range(theta.size):
        x = theta.copy()
        x[i] += steps[i]
        grad[i] = (loss(x) - f0) / steps[i]
    return grad


class SequenceLoss:
    """Mean per-frame IoU loss of one sequence as a function of the flat parameters.

    Calling the object evaluates one vector and caches its intermediates.
    :meth:`batch` evaluates many vectors, recomputing only the stages whose
    parameters differ from the cached vector.
    """

    def __init__(self, frames, config: PipelineConfig, manifest, extractor=None):
        self.frames = list(frames)
        if not self.frames or any(f.gt is None for f in self.frames):
            raise ParameterError("training needs ground-truth masks on every frame")
        self.config = config
        self.manifest = manifest
        self.prepared = prepare_sequence(self.frames, config, extractor)
        self.gts = [np.asarray(f.gt, dtype=np.float64) for f in self.frames]
        self._groups = self._name_groups()
        self._base = None
        self._cache = None

    def _name_groups(self) -> dict[tuple[str, str], np.ndarray]:
        # column indices of each (stream, stage); tied streams share the rgb columns
        cols: dict[tuple[str, str], list] = {}
        tied = not any(name.startswith("flow.") for name, _, _ in self.manifest)
        for name, shape, off in self.manifest:
            size = int(np.prod(shape, dtype=int))
            parts = name.split(".")
            if parts[0] == "decoder":
                keys = [("decoder", "decoder")]
            else:
                stage = "select" if parts[1] in ("pgm", "psm") else "correlate"
                streams = STREAMS if tied else (parts[0],)
                keys = [(s, stage) for s in streams]
            for key in keys:
                cols.setdefault(key, []).extend(range(off, off + size))
        return {k: np.array(v, dtype=int) for k, v in cols.items()}

    def _weights(self, theta) -> ModelWeights:
        return unflatten(theta, self.manifest, self.config.heads)

    def _frame_loss(self, taus_rgb, taus_flow, decoder, t: int) -> np.ndarray:
        probs = sigmoid(decode_logits(taus_rgb, taus_flow, decoder))
        pred = np.clip(bilinear_resize(probs, self.config.height, self.config.width), 0.0, 1.0)
        return iou_loss(pred, self.gts[t])

    def _run(self, weights: ModelWeights, cache=None, touched=None):
        """Forward pass; streams not in ``touched`` reuse ``cache``."""
        cfg = self.config
        state = new_state(cfg)
        banks = {s: state.bank(s) for s in STREAMS}
        sel = {s: [] for s in STREAMS}
        taus = {s: [] for s in STREAMS}
        for t, inputs in enumerate(self.prepared):
            for s in STREAMS:
                sw = weights.stream(s)
                redo_sel = cache is None or (s, "select") in touched
                redo_tau = redo_sel or (s, "correlate") in touched
                if redo_sel:
                    selected, banks[s], _ = select_stage(inputs[s], banks[s], sw, cfg)
                else:
                    selected = cache["sel"][s][t]
                sel[s].append(selected)
                taus[s].append(correlate_stage(inputs[s], selected, sw, cfg) if redo_tau else cache["tau"][s][t])
        decoder = weights.decoder
        losses = [self._frame_loss(taus["rgb"][t], taus["flow"][t], decoder, t) for t in range(len(self.prepared))]
        return np.mean(losses, axis=0), {"sel": sel, "tau": taus}

    def __call__(self, theta) -> float:
        theta = np.asarray(theta, dtype=np.float64)
        loss, cache = self._run(self._weights(theta))
        self._base, self._cache = theta.copy(), cache
        return float(loss)

    def batch(self, thetas) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=np.float64)
        if self._base is None or self._base.shape[-1] != thetas.shape[-1]:
            self(thetas[0])
        diff = thetas != self._base
        keys = sorted(self._groups)
        # rows touching the same set of stages are evaluated together
        signature = np.stack([diff[:, self._groups[k]].any(axis=1) for k in keys], axis=1)
        out = np.empty(thetas.shape[0])
        for sig in np.unique(signature, axis=0):
            rows = np.flatnonzero((signature == sig).all(axis=1))
            touched = {k for k, on in zip(keys, sig) if on}
            out[rows] = self._batch_touched(thetas[rows], touched)
        return out

    def _batch_touched(self, thetas, touched) -> np.ndarray:
        if not touched:
            return np.full(thetas.shape[0], self._run(self._weights(self._base))[0])
        # untouched stages run on the unbatched base weights
        base_w, batch_w = self._weights(self._base), self._weights(thetas)
        streams = {}
        for s in STREAMS:
            use_batch = (s, "select") in touched or (s, "correlate") in touched
            streams[s] = (batch_w if use_batch else base_w).stream(s)
        dec = batch_w.decoder if ("decoder", "decoder") in touched else base_w.decoder
        mixed = ModelWeights(streams["rgb"], streams["flow"], dec, False)
        loss, _ = self._run(mixed, self._cache, touched)
        return np.broadcast_to(loss, (thetas.shape[0],)).copy()


@dataclass
class TrainResult:
    weights: ModelWeights
    theta: np.ndarray
    trace: list  # loss before every step, then the final loss


def train_toy(
    frames,
    config: PipelineConfig,
    steps: int = 200,
    lr: float = 1.0,
    eps_rel: float = 1e-3,
    eps_floor: float = 1e-4,
    seed: int = 0,
    weights: ModelWeights | None = None,
    max_grad_norm: float | None = 1.0,
    extractor=None,
    callback=None,
) -> TrainResult:
    """Plain gradient descent with central-difference gradients.

    Banks start empty on every loss evaluation. When ``max_grad_norm`` is set
    the gradient is rescaled to at most that norm: discrete top-K selection
    makes the loss piecewise smooth, and a step straddling a selection flip
    yields a huge difference quotient.
    """
    if steps < 0:
        raise ParameterError("steps must be >= 0")
    weights = init_weights(config, seed) if weights is None else weights
    pv: ParamVector = flatten(weights)
    theta = pv.values.copy()
    loss = SequenceLoss(frames, config, pv.manifest, extractor)
    trace = []
    for step in range(steps + 1):
        value = loss(theta)
        if not np.isfinite(value):
            raise NumericalError(f"non-finite loss at step {step}")
        trace.append(value)
        if callback is not None:
            callback(step, value)
        if step == steps:
            break
        g = fd_gradient(loss, theta, relative_step(theta, eps_rel, eps_floor), batch_loss=loss.batch)
        if max_grad_norm is not None:
            norm = np.linalg.norm(g)
            if norm > max_grad_norm:
                g *= max_grad_norm / norm
        theta = theta - lr * g
        log.debug("step %d loss %.6f", step, value)
    return TrainResult(unflatten(theta, pv.manifest, config.heads), theta, trace)

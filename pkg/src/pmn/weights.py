"""Weight bundles, seeded initialisation, and flattening to a parameter vector.

Tensors are named ``<stream>.<module>.<...>`` and ``decoder.<...>``; the
same names key the on-disk container. With tied streams only the ``rgb``
bundle is stored and the flow stream reuses it.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import container
from .cmgm import CmgmWeights
from .config import PipelineConfig
from .decoder import DecoderWeights
from .errors import FormatError
from .numerics import AttentionParams, LinearParams
from .pgm import PgmWeights
from .psm import PsmWeights


@dataclass(frozen=True)
class StreamWeights:
    pgm: PgmWeights
    psm: PsmWeights
    cmgm: CmgmWeights


@dataclass(frozen=True)
class ModelWeights:
    rgb: StreamWeights
    flow: StreamWeights
    decoder: DecoderWeights
    tied: bool = False

    def stream(self, name: str) -> StreamWeights:
        return self.rgb if name == "rgb" else self.flow


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def _linear(rng, n_in: int, n_out: int) -> LinearParams:
    return LinearParams(_glorot(rng, (n_out, n_in), n_in, n_out), np.zeros(n_out))


def _stream(rng, cfg: PipelineConfig) -> StreamWeights:
    c = cfg.channels
    pgm = PgmWeights(tuple(_linear(rng, ci, c) for ci in cfg.encoder_channels))
    attn = AttentionParams(*(_linear(rng, c, c) for _ in range(4)), heads=cfg.heads)
    psm = PsmWeights(
        np.ones(c), np.zeros(c), attn, np.ones(c), np.zeros(c),
        _linear(rng, c, cfg.hidden), _linear(rng, cfg.hidden, c),
    )
    cmgm = CmgmWeights(tuple(_linear(rng, ci, c) for ci in cfg.encoder_channels))
    return StreamWeights(pgm, psm, cmgm)


def init_weights(config: PipelineConfig, seed: int | None = None) -> ModelWeights:
    """Glorot-uniform weights, zero biases, unit norms; bit-identical per seed."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    rgb = _stream(rng, config)
    flow = rgb if config.tie_streams else _stream(rng, config)
    d, cin = config.decoder_width, 2 * config.n_tau
    kernels = tuple(_glorot(rng, (d, cin, 3, 3), cin * 9, d * 9) for _ in range(3))
    biases = tuple(np.zeros(d) for _ in range(3))
    merges = (_linear(rng, d, d), _linear(rng, d, d))
    decoder = DecoderWeights(kernels, biases, merges, _linear(rng, d, 1))
    return ModelWeights(rgb, flow, decoder, config.tie_streams)


def _lin_items(prefix: str, p: LinearParams):
    yield f"{prefix}.weight", p.weight
    yield f"{prefix}.bias", p.bias


def _stream_items(prefix: str, s: StreamWeights):
    for i, p in enumerate(s.pgm.levels):
        yield from _lin_items(f"{prefix}.pgm.{i}", p)
    w = s.psm
    yield f"{prefix}.psm.norm1.scale", w.norm1_scale
    yield f"{prefix}.psm.norm1.shift", w.norm1_shift
    for name in ("query", "key", "value", "output"):
        yield from _lin_items(f"{prefix}.psm.attn.{name}", getattr(w.attention, name))
    yield f"{prefix}.psm.norm2.scale", w.norm2_scale
    yield f"{prefix}.psm.norm2.shift", w.norm2_shift
    yield from _lin_items(f"{prefix}.psm.fc1", w.fc1)
    yield from _lin_items(f"{prefix}.psm.fc2", w.fc2)
    for i, p in enumerate(s.cmgm.levels):
        yield from _lin_items(f"{prefix}.cmgm.{i}", p)


def to_tensors(weights: ModelWeights) -> dict[str, np.ndarray]:
    out = dict(_stream_items("rgb", weights.rgb))
    if not weights.tied:
        out.update(_stream_items("flow", weights.flow))
    d = weights.decoder
    for r in range(3):
        out[f"decoder.conv{r}.kernel"] = d.kernels[r]
        out[f"decoder.conv{r}.bias"] = d.biases[r]
    for i, m in enumerate(d.merges):
        out.update(_lin_items(f"decoder.merge{i}", m))
    out.update(_lin_items("decoder.head", d.head))
    return out


def _get(t: dict, name: str) -> np.ndarray:
    try:
        return t[name]
    except KeyError:
        raise FormatError(f"missing tensor {name!r}") from None


def _lin(t, prefix) -> LinearParams:
    return LinearParams(_get(t, f"{prefix}.weight"), _get(t, f"{prefix}.bias"))


def _stream_from(t, prefix: str, heads: int) -> StreamWeights:
    pgm = PgmWeights(tuple(_lin(t, f"{prefix}.pgm.{i}") for i in range(3)))
    attn = AttentionParams(*(_lin(t, f"{prefix}.psm.attn.{n}") for n in ("query", "key", "value", "output")), heads=heads)
    psm = PsmWeights(
        _get(t, f"{prefix}.psm.norm1.scale"), _get(t, f"{prefix}.psm.norm1.shift"), attn,
        _get(t, f"{prefix}.psm.norm2.scale"), _get(t, f"{prefix}.psm.norm2.shift"),
        _lin(t, f"{prefix}.psm.fc1"), _lin(t, f"{prefix}.psm.fc2"),
    )
    cmgm = CmgmWeights(tuple(_lin(t, f"{prefix}.cmgm.{i}") for i in range(3)))
    return StreamWeights(pgm, psm, cmgm)


def from_tensors(tensors: dict[str, np.ndarray], heads: int) -> ModelWeights:
    tied = not any(k.startswith("flow.") for k in tensors)
    rgb = _stream_from(tensors, "rgb", heads)
    flow = rgb if tied else _stream_from(tensors, "flow", heads)
    decoder = DecoderWeights(
        tuple(_get(tensors, f"decoder.conv{r}.kernel") for r in range(3)),
        tuple(_get(tensors, f"decoder.conv{r}.bias") for r in range(3)),
        (_lin(tensors, "decoder.merge0"), _lin(tensors, "decoder.merge1")),
        _lin(tensors, "decoder.head"),
    )
    return ModelWeights(rgb, flow, decoder, tied)


def save_weights(path: str | os.PathLike, weights: ModelWeights) -> None:
    container.save(path, to_tensors(weights))


def load_weights(path: str | os.PathLike, heads: int) -> ModelWeights:
    return from_tensors(container.load(path), heads)


@dataclass(frozen=True)
class ParamVector:
    """Flat parameters plus the ``(name, shape, offset)`` manifest to rebuild tensors."""

    values: np.ndarray
    manifest: tuple

    def __len__(self) -> int:
        return self.values.shape[-1]

    def slices(self) -> dict[str, slice]:
        return {name: slice(off, off + int(np.prod(shape, dtype=int))) for name, shape, off in self.manifest}


def flatten(weights: ModelWeights) -> ParamVector:
    manifest, chunks, off = [], [], 0
    for name, arr in to_tensors(weights).items():
        manifest.append((name, arr.shape, off))
        chunks.append(np.asarray(arr, dtype=np.float64).ravel())
        off += arr.size
    return ParamVector(np.concatenate(chunks), tuple(manifest))


def unflatten(values: np.ndarray, manifest, heads: int) -> ModelWeights:
    """Rebuild weights from ``values`` of shape ``(..., P)``; leading dims become batch dims."""
    values = np.asarray(values, dtype=np.float64)
    lead = values.shape[:-1]
    tensors = {}
    for name, shape, off in manifest:
        size = int(np.prod(shape, dtype=int))
        tensors[name] = values[..., off : off + size].reshape(lead + tuple(shape))
    return from_tensors(tensors, heads)

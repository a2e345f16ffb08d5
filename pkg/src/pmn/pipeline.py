"""Per-frame and per-sequence orchestration of the two-stream model.

A frame runs each stream through sampler -> masks -> features -> fusion ->
prototypes -> scoring -> memory update -> correlation maps, then the
decoder fuses both streams. Memory banks are folded over the frames of one
sequence and start empty for every sequence.

The stage functions broadcast over leading parameter dimensions, so the
same code evaluates a batch of weight sets (see :mod:`pmn.fd_trainer`).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .cmgm import CorrelationMaps, correlation_maps, project_features
from .config import PipelineConfig
from .decoder import SegMask, decode
from .encoder import FeaturePyramid, HandcraftedExtractor
from .errors import ConfigurationError, DimensionError, ParameterError, PMNError
from .metrics import MetricsRecord, sequence_metrics
from .pgm import fuse_pyramid, generate_prototypes
from .psm import MemoryBank, build_block, sample_block, score_block, score_block_mlp, top_k_order, update_memory
from .slic import MaskStack, downsample_masks, grid_masks, random_masks, slic_segment
from .weights import ModelWeights, StreamWeights

STREAMS = ("rgb", "flow")
ZERO_FLOW_GRAY = 0.5


@dataclass
class FrameRecord:
    index: int
    rgb: np.ndarray
    flow: np.ndarray | None = None  # None on the last frame: previous flow is reused
    gt: np.ndarray | None = None
    rgb_features: FeaturePyramid | None = None
    flow_features: FeaturePyramid | None = None


@dataclass(frozen=True)
class SequenceState:
    rgb: MemoryBank
    flow: MemoryBank
    sequence_id: str = ""
    last_flow: np.ndarray | None = None
    scores: dict = field(default_factory=dict)  # last sampling vector per stream

    def bank(self, stream: str) -> MemoryBank:
        return self.rgb if stream == "rgb" else self.flow


@dataclass(frozen=True)
class StreamInputs:
    """Everything about one stream of one frame that does not depend on weights."""

    masks: MaskStack
    pyramid: FeaturePyramid


@dataclass
class SequenceResult:
    masks: list
    metrics: MetricsRecord | None
    scores: list  # per frame: {"rgb": upsilon, "flow": upsilon}


def new_state(config: PipelineConfig, sequence_id: str = "") -> SequenceState:
    c = config.channels
    return SequenceState(MemoryBank.empty(c, sequence_id, "rgb"), MemoryBank.empty(c, sequence_id, "flow"), sequence_id)


def default_extractor(config: PipelineConfig):
    return HandcraftedExtractor(config.encoder_channels)


def sample_superpixels(image: np.ndarray, stream: str, t: int, config: PipelineConfig):
    h, w = config.height, config.width
    if config.sampler == "superpixel":
        return slic_segment(image, config.n_segments, config.slic_compactness, config.slic_iters, config.seed)
    if config.sampler == "grid":
        return grid_masks(h, w, config.n_segments)
    seed = np.random.SeedSequence([config.seed, t, STREAMS.index(stream)]).generate_state(1)[0]
    return random_masks(h, w, config.n_segments, int(seed))


def prepare_stream(image, stream: str, t: int, config: PipelineConfig, extractor=None, features=None) -> StreamInputs:
    image = np.asarray(image, dtype=np.float64)
    if image.shape != (config.height, config.width, 3):
        raise DimensionError(f"expected a {config.height}x{config.width}x3 image, got {image.shape}")
    sp = sample_superpixels(image, stream, t, config)
    masks = downsample_masks(sp, config.height // 8, config.width // 8, stream)
    if features is None:
        features = (extractor or default_extractor(config))(image, stream)
    return StreamInputs(masks, features)


def _with_context(exc: PMNError, where: str) -> PMNError:
    return type(exc)(f"{where}: {exc}")


def _flow_image(frame: FrameRecord, last_flow, config: PipelineConfig) -> np.ndarray:
    if frame.flow is not None:
        return frame.flow
    if last_flow is not None:
        return last_flow
    return np.full((config.height, config.width, 3), ZERO_FLOW_GRAY)


def prepare_frame(frame: FrameRecord, config: PipelineConfig, extractor=None, last_flow=None) -> dict[str, StreamInputs]:
    images = {"rgb": frame.rgb, "flow": _flow_image(frame, last_flow, config)}
    feats = {"rgb": frame.rgb_features, "flow": frame.flow_features}
    out = {}
    for s in STREAMS:
        try:
            out[s] = prepare_stream(images[s], s, frame.index, config, extractor, feats[s])
        except PMNError as exc:
            raise _with_context(exc, f"frame {frame.index}, stream {s}") from exc
    return out


def prepare_sequence(frames, config: PipelineConfig, extractor=None) -> list[dict[str, StreamInputs]]:
    prepared, last_flow = [], None
    for frame in frames:
        prepared.append(prepare_frame(frame, config, extractor, last_flow))
        last_flow = _flow_image(frame, last_flow, config)
    return prepared


def select_stage(inputs: StreamInputs, bank: MemoryBank, sw: StreamWeights, config: PipelineConfig):
    """Prototype generation, scoring and memory update for one stream.

    Returns ``(selected, new_bank, upsilon)``, where ``selected`` holds the
    ``n_tau`` best sampled prototypes in descending score order.
    """
    E = fuse_pyramid(inputs.pyramid, sw.pgm)
    protos = generate_prototypes(E, inputs.masks)
    current = bank if config.memory_on else MemoryBank.empty(bank.width, bank.sequence_id, bank.stream)
    block = build_block(protos, current)
    scorer = score_block if config.scorer == "transformer" else score_block_mlp
    _, upsilon = scorer(block, sw.psm, config.residuals)
    spb = sample_block(block, upsilon)
    order = top_k_order(upsilon, config.n_tau)
    selected = np.take_along_axis(spb, order[..., None], axis=-2)
    if config.memory_on:
        stored = block.rows if config.store_raw else None
        bank = update_memory(bank, spb, upsilon, config.k, stored_rows=stored)
    return selected, bank, upsilon


def correlate_stage(inputs: StreamInputs, selected: np.ndarray, sw: StreamWeights, config: PipelineConfig) -> CorrelationMaps:
    return correlation_maps(project_features(inputs.pyramid, sw.cmgm), selected, config.n_tau)


def _check_weights(weights: ModelWeights, config: PipelineConfig) -> None:
    if weights.decoder.in_channels != 2 * config.n_tau:
        raise ConfigurationError(
            f"decoder expects {weights.decoder.in_channels} correlation channels, config gives {2 * config.n_tau}"
        )


def forward_prepared(state: SequenceState, inputs: dict[str, StreamInputs], weights: ModelWeights, config: PipelineConfig, t: int = 0):
    taus, banks, scores = {}, {}, {}
    for s in STREAMS:
        sw = weights.stream(s)
        try:
            selected, banks[s], scores[s] = select_stage(inputs[s], state.bank(s), sw, config)
            taus[s] = correlate_stage(inputs[s], selected, sw, config)
        except PMNError as exc:
            raise _with_context(exc, f"frame {t}, stream {s}") from exc
    mask = decode(taus["rgb"], taus["flow"], weights.decoder, config.height, config.width)
    return mask, replace(state, rgb=banks["rgb"], flow=banks["flow"], scores=scores), taus


def process_frame(state: SequenceState, frame: FrameRecord, weights: ModelWeights, config: PipelineConfig, extractor=None):
    """One step of the sequence fold: returns ``(mask, new_state)``."""
    _check_weights(weights, config)
    inputs = prepare_frame(frame, config, extractor, state.last_flow)
    mask, new, _ = forward_prepared(state, inputs, weights, config, frame.index)
    return mask, replace(new, last_flow=_flow_image(frame, state.last_flow, config))


def run_sequence(frames, weights: ModelWeights, config: PipelineConfig, extractor=None, sequence_id: str = "", prepared=None) -> SequenceResult:
    frames = list(frames)
    if not frames:
        raise ParameterError("run_sequence needs at least one frame")
    _check_weights(weights, config)
    if prepared is None:
        prepared = prepare_sequence(frames, config, extractor)
    state = new_state(config, sequence_id)
    masks, scores = [], []
    for frame, inputs in zip(frames, prepared):
        mask, state, _ = forward_prepared(state, inputs, weights, config, frame.index)
        masks.append(mask)
        scores.append(dict(state.scores))
    metrics = None
    if all(f.gt is not None for f in frames):
        metrics = sequence_metrics([(m.values, f.gt) for m, f in zip(masks, frames)])
    return SequenceResult(masks, metrics, scores)


def frames_from_arrays(rgb, flow, gt=None) -> list[FrameRecord]:
    """Pair up image lists; ``flow`` may be one shorter than ``rgb``."""
    rgb, flow = list(rgb), list(flow)
    if len(flow) not in (len(rgb), len(rgb) - 1):
        raise ParameterError(f"{len(rgb)} frames but {len(flow)} flow images")
    gt = list(gt) if gt is not None else [None] * len(rgb)
    return [
        FrameRecord(t, rgb[t], flow[t] if t < len(flow) else None, gt[t])
        for t in range(len(rgb))
    ]


def sweep_k(frames, weights: ModelWeights, config: PipelineConfig, k_values, extractor=None) -> list[dict]:
    """J&F for each distinct memory size; ``k = 0`` is the memory-off model.

    The number of correlation channels stays at ``config.n_tau`` so one set
    of decoder weights serves every row.
    """
    frames = list(frames)
    n_tau = config.n_tau
    prepared = prepare_sequence(frames, config, extractor)
    rows = []
    for k in sorted(set(int(k) for k in k_values)):
        if k < 0:
            raise ParameterError(f"memory size must be >= 0, got {k}")
        cfg = config.replace(k=k, tau_channels=n_tau)
        res = run_sequence(frames, weights, cfg, extractor, prepared=prepared)
        if res.metrics is None:
            raise ParameterError("sweep_k needs ground-truth masks on every frame")
        rows.append({"k": k, "jf": res.metrics.jf, "j": res.metrics.j, "f": res.metrics.f, "masks": res.masks})
    return rows

"""Pipeline configuration, presets, and the ``key = value`` config file format.

Config files are UTF-8 text, one ``namespace.key = value`` per line; ``#``
starts a comment. Recognised keys are listed in ``KEYS``.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass

from .errors import ConfigurationError

SAMPLERS = ("superpixel", "grid", "random")
SCORERS = ("transformer", "mlp")


@dataclass(frozen=True)
class PipelineConfig:
    height: int = 352
    width: int = 352
    n_segments: int = 100
    k: int = 50  # memory capacity; 0 disables the bank
    tau_channels: int | None = None  # correlation channels per stream; defaults to k
    sampler: str = "superpixel"
    scorer: str = "transformer"
    memory: bool = True
    residuals: bool = True
    store_raw: bool = False
    tie_streams: bool = False
    encoder_channels: tuple[int, int, int] = (16, 16, 16)
    channels: int = 32
    heads: int = 4
    mlp_hidden: int | None = None  # defaults to 2 * channels
    decoder_width: int = 16
    slic_compactness: float = 10.0
    slic_iters: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.height % 16 or self.width % 16 or self.height < 16 or self.width < 16:
            raise ConfigurationError(f"image size {self.height}x{self.width} must be a multiple of 16")
        if self.sampler not in SAMPLERS:
            raise ConfigurationError(f"sampler must be one of {SAMPLERS}, got {self.sampler!r}")
        if self.scorer not in SCORERS:
            raise ConfigurationError(f"scorer must be one of {SCORERS}, got {self.scorer!r}")
        if self.n_segments < 1 or self.k < 0:
            raise ConfigurationError("n_segments must be >= 1 and k >= 0")
        if self.channels % self.heads:
            raise ConfigurationError(f"channels {self.channels} not divisible by heads {self.heads}")
        if self.n_tau < 1:
            raise ConfigurationError("tau_channels must be >= 1 (set it explicitly when k = 0)")

    @property
    def n_tau(self) -> int:
        return self.k if self.tau_channels is None else self.tau_channels

    @property
    def hidden(self) -> int:
        return 2 * self.channels if self.mlp_hidden is None else self.mlp_hidden

    @property
    def memory_on(self) -> bool:
        return self.memory and self.k > 0

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)


PRESETS = {
    "paper": PipelineConfig(),
    "desk": PipelineConfig(height=64, width=64),
    "toy": PipelineConfig(
        height=32,
        width=32,
        n_segments=16,
        k=6,
        channels=8,
        heads=2,
        encoder_channels=(6, 6, 6),
        decoder_width=2,
        tie_streams=True,
    ),
}


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("on", "true", "yes", "1"):
        return True
    if v in ("off", "false", "no", "0"):
        return False
    raise ValueError(f"expected on/off, got {s!r}")


def _opt_int(s: str):
    return None if s.strip().lower() in ("", "none", "auto") else int(s)


def _triple(s: str) -> tuple[int, int, int]:
    parts = [int(p) for p in s.split(",")]
    if len(parts) == 1:
        parts *= 3
    if len(parts) != 3:
        raise ValueError(f"expected one or three integers, got {s!r}")
    return tuple(parts)


KEYS = {
    "pipeline.height": ("height", int),
    "pipeline.width": ("width", int),
    "pipeline.n_segments": ("n_segments", int),
    "pipeline.k": ("k", int),
    "pipeline.tau_channels": ("tau_channels", _opt_int),
    "pipeline.sampler": ("sampler", str),
    "pipeline.seed": ("seed", int),
    "psm.scorer": ("scorer", str),
    "psm.residuals": ("residuals", _bool),
    "psm.heads": ("heads", int),
    "psm.mlp_hidden": ("mlp_hidden", _opt_int),
    "memory.enabled": ("memory", _bool),
    "memory.store_raw": ("store_raw", _bool),
    "model.channels": ("channels", int),
    "model.tie_streams": ("tie_streams", _bool),
    "encoder.channels": ("encoder_channels", _triple),
    "decoder.width": ("decoder_width", int),
    "slic.compactness": ("slic_compactness", float),
    "slic.iters": ("slic_iters", int),
}


def parse_overrides(items: dict[str, str]) -> dict:
    out = {}
    for key, raw in items.items():
        if key not in KEYS:
            raise ConfigurationError(f"unknown config key {key!r}")
        field, conv = KEYS[key]
        try:
            out[field] = conv(raw.strip()) if conv is not str else raw.strip()
        except ValueError as exc:
            raise ConfigurationError(f"{key}: {exc}") from None
    return out


def parse_config_text(text: str) -> dict[str, str]:
    items = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        items[key.strip()] = value.strip()
    return items


def load_config(path: str | os.PathLike | None = None, base: str = "paper", overrides: dict[str, str] | None = None) -> PipelineConfig:
    """Preset ``base``, then the file at ``path``, then ``overrides`` (highest priority)."""
    if base not in PRESETS:
        raise ConfigurationError(f"unknown preset {base!r}; choose from {sorted(PRESETS)}")
    items = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            items.update(parse_config_text(fh.read()))
    items.update(overrides or {})
    return PRESETS[base].replace(**parse_overrides(items))


def parameter_count(config: PipelineConfig) -> int:
    """Number of trainable scalars implied by ``config``.

    Per stream: three level projections into C for fusion and three more for
    correlation, plus the scoring block (two norms, four C x C attention maps,
    a C -> hidden -> C MLP). Shared: the decoder (three 3x3 convs from
    2 * n_tau channels to D, two D x D merges, one D -> 1 head).
    """
    c, hid, d = config.channels, config.hidden, config.decoder_width
    proj = sum(ci * c + c for ci in config.encoder_channels)
    psm = 4 * c + 4 * (c * c + c) + (c * hid + hid) + (hid * c + c)
    stream = 2 * proj + psm
    decoder = 3 * (d * 2 * config.n_tau * 9 + d) + 2 * (d * d + d) + (d + 1)
    return stream * (1 if config.tie_streams else 2) + decoder

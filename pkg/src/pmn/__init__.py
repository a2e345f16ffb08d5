"""Two-stream video object segmentation with prototype memory, at desk scale."""

from .config import PRESETS, PipelineConfig, load_config, parameter_count
from .errors import (
    ConfigurationError,
    DimensionError,
    FormatError,
    NumericalError,
    ParameterError,
    PMNError,
    PreconditionError,
)
from .pipeline import FrameRecord, frames_from_arrays, process_frame, run_sequence, sweep_k
from .weights import init_weights, load_weights, save_weights

__all__ = [
    "PRESETS",
    "PipelineConfig",
    "load_config",
    "parameter_count",
    "PMNError",
    "ConfigurationError",
    "DimensionError",
    "FormatError",
    "NumericalError",
    "ParameterError",
    "PreconditionError",
    "FrameRecord",
    "frames_from_arrays",
    "process_frame",
    "run_sequence",
    "sweep_k",
    "init_weights",
    "load_weights",
    "save_weights",
]

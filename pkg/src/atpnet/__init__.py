"""Learned ternary block sampling with attention-based pruning and two-stage reconstruction."""
from .errors import (
    ATPError,
    ConfigError,
    DataError,
    FormatError,
    GraphError,
    InputSizeError,
    QuantizationError,
    ShapeError,
    TrainingError,
)
from .formats import Checkpoint, load_measurements, save_measurements
from .metrics import block_dc, psnr
from .model import ATPNet, TrainConfig
from .packed import PackedTernaryMatrix, pack, storage_report, ternary_matvec, ternary_sample, unpack
from .sampling import SamplerConfig, SamplingLayer, out_channels
from .tensor import Module, Parameter, Tensor, no_grad
from .training import EvalReport, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "ATPError", "ConfigError", "DataError", "FormatError", "GraphError", "InputSizeError",
    "QuantizationError", "ShapeError", "TrainingError",
    "Checkpoint", "load_measurements", "save_measurements",
    "block_dc", "psnr",
    "ATPNet", "TrainConfig",
    "PackedTernaryMatrix", "pack", "storage_report", "ternary_matvec", "ternary_sample", "unpack",
    "SamplerConfig", "SamplingLayer", "out_channels",
    "Module", "Parameter", "Tensor", "no_grad",
    "EvalReport", "evaluate", "train",
]

"""Shadow removal with dilated regional attention, on a from-scratch autodiff core."""

from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    EvaluationError,
    GatherIndexError,
    ImageFormatError,
    RasmError,
    ShapeError,
    TrainingError,
)
from .kernels import backend, set_backend
from .tensor import ComputationRecord, Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "Tensor", "ComputationRecord", "no_grad", "backend", "set_backend",
    "RasmError", "ShapeError", "ConfigError", "GatherIndexError",
    "ContractError", "TrainingError", "EvaluationError", "ImageFormatError",
    "CheckpointError", "__version__",
]

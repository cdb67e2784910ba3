"""Exception types shared across the package."""


class RasmError(Exception):
    """Base class for all package errors."""


class ShapeError(RasmError, ValueError):
    """Operands have incompatible or invalid shapes."""


class ConfigError(RasmError, ValueError):
    """A configuration is internally inconsistent or incompatible with its input."""


class GatherIndexError(RasmError, IndexError):
    """A gather/lookup index is out of range."""


class ContractError(RasmError, RuntimeError):
    """An operation was called outside its contract (e.g. backward on a non-scalar)."""


class TrainingError(RasmError, RuntimeError):
    """Training cannot proceed (non-finite loss or gradient)."""


class EvaluationError(RasmError, RuntimeError):
    """Metric evaluation is impossible (e.g. empty mask selection)."""


class ImageFormatError(RasmError, ValueError):
    """An image file is missing, malformed, or uses an unsupported encoding."""


class CheckpointError(RasmError, ValueError):
    """A checkpoint file is malformed or incompatible."""

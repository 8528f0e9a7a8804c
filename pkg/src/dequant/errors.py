"""Exception hierarchy shared across the package."""


class DequantError(Exception):
    """Base class for all structured errors raised by this package."""


class ShapeMismatchError(DequantError):
    """Tensor or image dimensions are incompatible with an operation."""


class GraphReleasedError(DequantError):
    """backward() was called again on a graph that has already been consumed."""


class MissingGradError(DequantError):
    """An optimizer step found a parameter whose gradient was never populated."""


class AttentionBudgetError(DequantError):
    """The q*q attention matrix would exceed the configured memory budget."""


class DivergenceError(DequantError):
    """A training loss became non-finite."""

    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


class ImageFormatError(DequantError):
    """An image file could not be decoded, or violates a declared bit depth."""


class ConfigError(DequantError):
    """A configuration file or flag value is invalid."""


class CheckpointError(DequantError):
    """Base class for checkpoint read/write failures."""


class CheckpointFormatError(CheckpointError):
    """Bad magic bytes, unsupported version, or malformed structure."""


class CheckpointTruncatedError(CheckpointError):
    """The checkpoint file ended before the declared contents."""


class CheckpointShapeError(CheckpointError):
    """A stored tensor does not match the model it is being restored into."""

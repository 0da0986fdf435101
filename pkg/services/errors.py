from typing import Any, Dict, Optional


class HandClipError(Exception):
    """Base class for every error raised by this package."""


class InvalidConfigError(HandClipError, ValueError):
    pass


class InvalidPromptError(HandClipError, ValueError):
    pass


class EncoderUnavailableError(HandClipError, RuntimeError):
    pass


class ShapeError(HandClipError, ValueError):
    pass


class NonFiniteError(HandClipError, FloatingPointError):
    def __init__(self, message: str, snapshot: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.snapshot = snapshot or {}


class DatasetLoadError(HandClipError, IOError):
    pass


class CheckpointError(HandClipError, IOError):
    pass


class FeatureCacheError(HandClipError, IOError):
    pass


class DegenerateInputError(HandClipError, ValueError):
    pass


def expect_shape(name: str, tensor, shape) -> None:
    """Raise ShapeError unless the trailing dims of `tensor` equal `shape`."""
    actual = tuple(tensor.shape)
    if len(actual) < len(shape) or actual[len(actual) - len(shape):] != tuple(shape):
        raise ShapeError(f'{name}: expected trailing shape {tuple(shape)}, got {actual}')

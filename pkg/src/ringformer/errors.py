"""
Exception types raised across the RingFormer engine.

Every class also derives from the builtin a plain numpy pipeline would raise,
so ``except ValueError`` style handlers keep working.
"""

from typing import Optional


class RingFormerError(Exception):
    """Base class for all engine errors."""


class DimensionError(RingFormerError, ValueError):
    """Tensor shapes do not fit the operation."""


class ConfigError(RingFormerError, ValueError):
    """A configuration invariant is violated."""


class ArgumentError(RingFormerError, ValueError):
    """A call argument is out of its allowed domain."""


class DegenerateInputError(RingFormerError, ValueError):
    """The input carries no usable data for the requested statistic."""


class NumericError(RingFormerError, ArithmeticError):
    """NaN or Inf detected."""

    def __init__(self, where: str, message: Optional[str] = None):
        self.where = where
        super().__init__(message or f"non-finite values produced by {where}")


class ProtocolError(RingFormerError, RuntimeError):
    """Ring state used outside of its rotation protocol."""


class DeviceError(RingFormerError, RuntimeError):
    """A simulated ring device failed."""

    def __init__(self, device: int, cause: BaseException):
        self.device = device
        self.cause = cause
        super().__init__(f"ring device {device} failed: {type(cause).__name__}: {cause}")


class FormatError(RingFormerError, OSError):
    """Malformed or unsupported file content."""

    def __init__(self, path, offset: int, message: str):
        self.path = str(path)
        self.offset = offset
        super().__init__(f"{path}: byte offset {offset}: {message}")

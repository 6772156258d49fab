"""Exception types shared across the toolkit."""


class MaucError(Exception):
    """Base class for all toolkit errors."""


class InvalidParameterError(MaucError, ValueError):
    """An argument violates a documented precondition."""


class NumericalFailureError(MaucError, ArithmeticError):
    """A numerical routine (e.g. a stationary-distribution solve) failed."""


class MemoryDesyncError(MaucError):
    """Encoder and decoder memories differ (digest mismatch)."""


class StreamFormatError(MaucError):
    """A compressed stream is malformed or truncated."""


class NoSolutionError(MaucError):
    """A root search found no crossing in its bracket."""

"""Exception types raised by the solvers and file readers."""


class LLGError(Exception):
    """Base class for all package errors."""


class GridMismatchError(LLGError, ValueError):
    """Array shapes do not agree with the grid or with each other."""


class ConvergenceError(LLGError, RuntimeError):
    """An inner solve missed its residual target."""


class InstabilityError(LLGError, RuntimeError):
    """A time march blew up.

    ``step`` is the index of the offending time level.
    """

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class NormalizationError(LLGError, ValueError):
    """A zero vector was met while projecting onto the unit sphere."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class FormatError(LLGError, ValueError):
    """A trajectory file is malformed."""


class ConfigError(LLGError, ValueError):
    """A run configuration failed validation."""


class StabilityWarning(UserWarning):
    """Time step exceeds the explicit-term guidance dt <= h^2/4."""

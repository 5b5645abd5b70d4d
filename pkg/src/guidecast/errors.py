"""Exception types shared across the package."""


class GuidecastError(Exception):
    """Base class for all package errors."""


class ConfigError(GuidecastError, ValueError):
    """Invalid configuration or argument combination."""


class DataError(GuidecastError, ValueError):
    """Input data violates a precondition (negative load, too few days, ...)."""


class NumericError(GuidecastError, ArithmeticError):
    """Non-finite values or a failed factorization."""


class StateError(GuidecastError, RuntimeError):
    """An operation was called in the wrong state."""


class DivergenceError(NumericError):
    """Training produced a non-finite loss."""

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class ArtifactError(GuidecastError, LookupError):
    """A required artifact (checkpoint, forecast, table entry) is missing."""

"""Exception types shared across the package."""


class FicmError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(FicmError, ValueError):
    """An argument violates a documented precondition (shape, range, tag)."""


class ConfigError(FicmError, ValueError):
    """A configuration value is missing, malformed, or out of range."""


class NumericError(FicmError, ArithmeticError):
    """A computation produced non-finite values; the message names the site."""


class LifecycleError(FicmError, RuntimeError):
    """An operation was called in the wrong object state (e.g. step after done)."""


class RunFailure(FicmError, RuntimeError):
    """A training run aborted mid-way; partial artifacts may exist."""

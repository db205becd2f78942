"""Exception hierarchy shared by every ouiscope module."""


class OuiscopeError(Exception):
    """Base class for all errors raised by this package."""


class InvalidBatchError(OuiscopeError, ValueError):
    """Batch too small for the minority-count normalization (needs B >= 2)."""


class NumericError(OuiscopeError, ValueError):
    """Non-finite value where a finite one is required."""


class SpecError(OuiscopeError, ValueError):
    """Inconsistent network or layer specification."""


class DivergenceError(OuiscopeError, ArithmeticError):
    """Training produced a non-finite quantity."""

    def __init__(self, message, step=None, layer=None):
        super().__init__(message)
        self.step = step
        self.layer = layer


class DatasetError(OuiscopeError, ValueError):
    """Invalid dataset, generator arguments or delimited-text input."""


class ConfigError(OuiscopeError, ValueError):
    """Invalid or unknown configuration value."""


class LogFormatError(OuiscopeError, ValueError):
    """Malformed trajectory log file."""

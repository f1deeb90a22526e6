"""Exception types shared across the package."""


class AsuqError(Exception):
    """Base class for all package errors."""


class DimensionError(AsuqError, ValueError):
    """Array shapes incompatible with the requested operation."""


class InvalidInputError(AsuqError, ValueError):
    """Argument outside the operation's domain (bad counts, NaNs, missing labels)."""


class NumericDomainError(AsuqError, ArithmeticError):
    """A value left the numeric domain an operation requires (e.g. variance <= 0)."""


class TrainingDivergedError(AsuqError):
    """Optimization produced non-finite values; carries the last finite iterate."""

    def __init__(self, message, last_params=None):
        super().__init__(message)
        self.last_params = last_params


class SamplerStuckError(AsuqError):
    """MCMC chain rejected every proposal for too many consecutive iterations."""


class CsvParseError(AsuqError, ValueError):
    """CSV cell failed to parse; carries 1-based row and column."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class ScalerError(AsuqError, ValueError):
    """Standardization impossible (constant column); names the offending column."""


class ConfigError(AsuqError, ValueError):
    """Experiment config file is malformed or contains unknown keys."""

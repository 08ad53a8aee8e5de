"""Exception hierarchy shared across the package."""


class TailCPError(Exception):
    """Base class for all package errors."""


class ConfigError(TailCPError):
    """Inconsistent or missing configuration (CLI exit code 1)."""


class DataError(TailCPError):
    """Invalid input data (CLI exit code 2)."""


class ProfileError(DataError):
    """A class-count profile cannot be built from the given parameters."""


class SplitError(DataError):
    """A calibration/test split would leave one side empty."""


class ParseError(DataError):
    """A prediction file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyCalibrationWarning(UserWarning):
    """A quantile was requested over an empty score set; +inf was returned."""

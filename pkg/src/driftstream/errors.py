"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4.
"""


class DriftStreamError(Exception):
    """Base class for all package errors."""


class ConfigError(DriftStreamError):
    """Invalid configuration value or malformed config document."""


class DataError(DriftStreamError):
    """Malformed or insufficient input data."""


class NumericError(DriftStreamError):
    """Runtime numeric failure (NaN loss, degenerate statistics)."""


class NotFittedError(DriftStreamError):
    """An estimator method was called before fit()."""


class WindowTooShortError(DataError):
    """A retraining window cannot form a single supervised pair yet."""

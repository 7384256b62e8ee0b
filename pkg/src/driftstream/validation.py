"""Input validation helpers used by the estimator-style classes."""

import numpy as np

from .errors import ConfigError, DataError


def check_matrix(X, name="X", min_rows=1):
    """Coerce to a 2-D float64 array and reject empty or ragged input."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise DataError(f"{name} must be 2-dimensional, got shape {X.shape}")
    if X.shape[0] < min_rows:
        raise DataError(f"{name} needs at least {min_rows} rows, got {X.shape[0]}")
    return X


def check_vector(x, name="x", length=None):
    x = np.asarray(x, dtype=np.float64).ravel()
    if length is not None and x.shape[0] != length:
        raise DataError(f"{name} must have length {length}, got {x.shape[0]}")
    return x


def check_in_range(value, lo, hi, name, *, open_lo=False, open_hi=False):
    """Validate a scalar against a closed/open interval, returning it."""
    bad_lo = value <= lo if open_lo else value < lo
    bad_hi = value >= hi if open_hi else value > hi
    if bad_lo or bad_hi:
        lo_b = "(" if open_lo else "["
        hi_b = ")" if open_hi else "]"
        raise ConfigError(f"{name}={value!r} outside {lo_b}{lo}, {hi}{hi_b}")
    return value


def check_choice(value, choices, name):
    if value not in choices:
        raise ConfigError(f"{name}={value!r} not one of {sorted(choices)}")
    return value


def check_positive_int(value, name):
    if not isinstance(value, (int, np.integer)) or value <= 0:
        raise ConfigError(f"{name} must be a positive integer, got {value!r}")
    return int(value)

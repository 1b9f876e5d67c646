"""Small argument checks shared by the public functions and estimators."""
import math
import numbers

import numpy as np


class ConfigError(ValueError):
    """Invalid parameters or configuration."""


class DataError(ValueError):
    """Malformed or inconsistent input data (traces, graphs, streams)."""


class InfeasibleError(RuntimeError):
    """A request that cannot be satisfied, e.g. an unreachable reliability."""


def check_finite(value, name):
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(f"{name} must be finite, got {value!r}")
    return value


def check_positive(value, name, allow_inf=False):
    value = float(value)
    if math.isnan(value) or value <= 0 or (math.isinf(value) and not allow_inf):
        raise ConfigError(f"{name} must be > 0, got {value!r}")
    return value


def check_nonnegative(value, name, allow_inf=False):
    value = float(value)
    if math.isnan(value) or value < 0 or (math.isinf(value) and not allow_inf):
        raise ConfigError(f"{name} must be >= 0, got {value!r}")
    return value


def check_probability(value, name):
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ConfigError(f"{name} must lie in [0, 1], got {value!r}")
    return value


def check_count(value, name, minimum=0):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if value < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {value}")
    return value


def check_seed(value, name="seed"):
    value = check_count(value, name)
    if value >= 2**64:
        raise ConfigError(f"{name} must fit in 64 bits")
    return value


def check_point(p, name):
    arr = np.asarray(p, dtype=float)
    if arr.shape[-1:] != (2,):
        raise ConfigError(f"{name} must be a 2-vector")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} has non-finite components")
    return arr


def check_time_grid(grid, name, strictly_increasing=True):
    arr = np.asarray(list(grid), dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ConfigError(f"{name} must be a non-empty 1-d sequence")
    if np.any(np.isnan(arr)) or np.any(arr < 0):
        raise ConfigError(f"{name} must contain non-negative times")
    if strictly_increasing and np.any(np.diff(arr) <= 0):
        raise ConfigError(f"{name} must be strictly increasing")
    return arr

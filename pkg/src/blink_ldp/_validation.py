"""Input validation helpers in the style of ``sklearn.utils.validation``."""

import numbers

import numpy as np

from .exceptions import ConfigError, DataError


def check_adjacency(adjacency, *, name="adjacency", weighted=False):
    """Validate a square, symmetric, zero-diagonal matrix.

    Binary matrices are returned as ``bool``; weighted ones as ``float64``
    with every entry required to lie in ``[0, 1]``.
    """
    a = np.asarray(adjacency)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DataError(f"{name} must be a square matrix, got shape {a.shape}")
    if weighted:
        a = a.astype(np.float64, copy=False)
        if not np.all(np.isfinite(a)):
            raise DataError(f"{name} contains non-finite entries")
        if a.size and (a.min() < 0.0 or a.max() > 1.0):
            raise DataError(f"{name} entries must lie in [0, 1]")
    else:
        if a.dtype != np.bool_:
            if a.size and not np.all((a == 0) | (a == 1)):
                raise DataError(f"{name} must be a 0/1 matrix")
            a = a.astype(bool)
    if np.any(np.diagonal(a)):
        raise DataError(f"{name} must have a zero diagonal")
    if not np.array_equal(a, a.T):
        raise DataError(f"{name} must be symmetric")
    return a


def check_positive(value, name, *, allow_inf=False):
    if not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise ConfigError(f"{name} must be a real number, got {value!r}")
    if np.isnan(value) or value <= 0 or (np.isinf(value) and not allow_inf):
        raise ConfigError(f"{name} must be positive and finite, got {value!r}")
    return float(value)


def check_fraction(value, name, *, closed_right=True):
    if not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise ConfigError(f"{name} must be a real number, got {value!r}")
    upper_ok = value <= 1 if closed_right else value < 1
    if not (0 <= value and upper_ok):
        bracket = "]" if closed_right else ")"
        raise ConfigError(f"{name} must lie in [0, 1{bracket}, got {value!r}")
    return float(value)


def check_seed(seed, name="seed"):
    if not isinstance(seed, numbers.Integral) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"{name} must be a non-negative integer, got {seed!r}")
    return int(seed)

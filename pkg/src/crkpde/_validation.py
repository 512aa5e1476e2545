"""Small argument checks shared by the solvers."""
import numbers

import numpy as np


def check_positive(value, name):
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)


def check_state(y, dimension=None):
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise ValueError(f"state must be one-dimensional, got shape {y.shape}")
    if dimension is not None and y.size != dimension:
        raise ValueError(f"state has length {y.size}, expected {dimension}")
    if not np.all(np.isfinite(y)):
        raise ValueError("state contains non-finite entries")
    return y


def check_vector(v, length, name="field"):
    v = np.asarray(v)
    if v.ndim != 1 or v.size != length:
        raise ValueError(f"{name} must be a vector of length {length}, got shape {v.shape}")
    return v


def check_max_iter(max_iter):
    if not isinstance(max_iter, numbers.Integral) or max_iter < 1:
        raise ValueError(f"max_iter must be a positive integer, got {max_iter!r}")
    return int(max_iter)

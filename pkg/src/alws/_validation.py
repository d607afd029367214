"""Small input-checking helpers shared by the public API."""
from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils import check_array


def as_observations(X, name="X", min_samples=1):
    """Return ``X`` as a finite float64 ``(n, d)`` array; 1-D input means ``d == 1``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return check_array(X, dtype=np.float64, ensure_min_samples=min_samples,
                       input_name=name, copy=False)


def as_targets(Y, n, name="Y"):
    """Targets as a ``(d_t, n)`` array (one row per target dimension)."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[None, :]
    if Y.ndim != 2 or Y.shape[1] != n:
        raise ValueError(f"{name} must have shape (d_t, {n}), got {Y.shape}")
    if not np.all(np.isfinite(Y)):
        raise ValueError(f"{name} contains non-finite values")
    return Y


def check_positive(value, name):
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)


def check_count(value, name, minimum=0):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def as_rng(seed):
    """Accept a seed, ``None`` or an existing generator."""
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

"""Small input-validation helpers shared across the package.

All helpers raise ``ValueError`` with the offending field name so that CLI
diagnostics can point at a config path.
"""

import numpy as np

__all__ = [
    "as_float_array",
    "check_finite",
    "check_nonnegative",
    "check_probability_vector",
    "check_positive",
]


def as_float_array(values, name, ndim=None):
    arr = np.asarray(values, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name}: expected a {ndim}-d array, got shape {arr.shape}")
    return arr


def check_finite(arr, name):
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(np.asarray(arr)))
        raise ValueError(f"{name}: non-finite entry at index {tuple(bad[0])}")
    return arr


def check_nonnegative(arr, name, tol=0.0):
    arr = np.asarray(arr)
    if np.any(arr < -tol):
        j = int(np.argmin(arr))
        raise ValueError(f"{name}: negative entry {arr.flat[j]!r} at flat index {j}")
    return arr


def check_positive(value, name):
    if not value > 0:
        raise ValueError(f"{name}: must be > 0, got {value!r}")
    return value


def check_probability_vector(vec, name, tol=1e-10):
    vec = as_float_array(vec, name, ndim=1)
    check_finite(vec, name)
    check_nonnegative(vec, name, tol=tol)
    s = float(vec.sum())
    if abs(s - 1.0) > tol:
        raise ValueError(f"{name}: entries sum to {s!r}, expected 1")
    return vec

"""Input validation helpers shared by the library and the estimator API."""

from __future__ import annotations

import numpy as np

from .errors import DataError

PROB_ATOL = 1e-6


def as_float_array(x, name="array", ndim=None) -> np.ndarray:
    """Coerce to a float ndarray, optionally enforcing dimensionality."""
    arr = np.asarray(x, dtype=np.float64) if not isinstance(x, np.ndarray) else x
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise DataError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    return arr


def check_features(X, name="X") -> np.ndarray:
    """Features: (N, ...) float array, at least one feature axis."""
    arr = as_float_array(X, name)
    if arr.ndim < 2:
        raise DataError(f"{name} must have shape (n_samples, ...), got {arr.shape}")
    return arr


def check_prob_vector(p, num_classes=None, name="probabilities") -> np.ndarray:
    """A valid probability vector: entries >= 0, sum 1 within tolerance."""
    vec = as_float_array(p, name, ndim=1)
    if num_classes is not None and vec.shape[0] != num_classes:
        raise DataError(f"{name} has length {vec.shape[0]}, expected {num_classes}")
    if (vec < -PROB_ATOL).any():
        raise DataError(f"{name} contains negative entries")
    total = float(vec.sum())
    if abs(total - 1.0) > PROB_ATOL:
        raise DataError(f"{name} sums to {total}, expected 1 within {PROB_ATOL}")
    return vec


def check_one_hot(y, num_classes=None, name="label") -> np.ndarray:
    """A one-hot label vector: exactly one entry 1.0, the rest 0.0."""
    vec = as_float_array(y, name, ndim=1)
    if num_classes is not None and vec.shape[0] != num_classes:
        raise DataError(f"{name} has length {vec.shape[0]}, expected {num_classes}")
    ones = np.isclose(vec, 1.0)
    zeros = np.isclose(vec, 0.0)
    if ones.sum() != 1 or not (ones | zeros).all():
        raise DataError(f"{name} is not one-hot: {vec}")
    return vec


def check_positive_int(value, name, minimum=1) -> int:
    if int(value) != value or value < minimum:
        raise DataError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_nonnegative(value, name) -> float:
    if value < 0:
        raise DataError(f"{name} must be non-negative, got {value!r}")
    return float(value)


def class_indices(labels) -> np.ndarray:
    """Argmax class per row, ties broken by lowest class index."""
    arr = as_float_array(labels)
    if arr.ndim == 1:
        arr = arr[None, :]
    return np.argmax(arr, axis=1)

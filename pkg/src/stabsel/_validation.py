"""Input validation helpers used by the estimators."""

import hashlib

import numpy as np

from .exceptions import ArgumentError, DegenerateLabels, NumericError, ShapeError


def check_matrix(X, name="X"):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"{name} must be 2D, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise NumericError(f"{name} contains non-finite values")
    return X


def check_labels(y, n_samples=None):
    """Return y as a float array of -1/+1 labels, requiring both classes."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise ShapeError(f"labels must be 1D, got shape {y.shape}")
    if n_samples is not None and y.shape[0] != n_samples:
        raise ShapeError(f"got {y.shape[0]} labels for {n_samples} samples")
    if not np.all(np.isin(y, (-1, 1))):
        raise ArgumentError("labels must be -1 or +1")
    if np.all(y == y[0]):
        raise DegenerateLabels("both label classes must be present")
    return y.astype(np.float64)


def check_Xy(X, y):
    X = check_matrix(X)
    y = check_labels(y, X.shape[0])
    return X, y


def check_n_features(X, n_features):
    X = check_matrix(X)
    if X.shape[1] != n_features:
        raise ShapeError(f"expected {n_features} features, got {X.shape[1]}")
    return X


def check_probability(value, name, *, open_low=False, open_high=False):
    lo_ok = value > 0 if open_low else value >= 0
    hi_ok = value < 1 if open_high else value <= 1
    if not (lo_ok and hi_ok):
        raise ArgumentError(f"{name}={value} out of range")
    return float(value)


def _entropy(seed, keys):
    parts = list(seed) if isinstance(seed, (tuple, list)) else [seed]
    return [_key_int(k) for k in parts + list(keys)]


def child_seed(seed, *keys):
    """Derive an independent integer seed from ``seed`` and a key path.

    ``seed`` may itself be a tuple of ints/strings. Uses numpy's SeedSequence
    so sibling streams never overlap.
    """
    ss = np.random.SeedSequence(_entropy(seed, keys))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def child_rng(seed, *keys):
    return np.random.default_rng(np.random.SeedSequence(_entropy(seed, keys)))


def _key_int(key):
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError("seeds must be nonnegative")
        return int(key)
    # stable across processes, unlike hash()
    return int.from_bytes(hashlib.sha256(str(key).encode("utf-8")).digest()[:8], "little")

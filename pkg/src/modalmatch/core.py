"""Dense vector/matrix primitives shared by every other module.

All numeric work is done on float64 numpy arrays. Inputs are validated and
coerced once at the public boundary; internal helpers assume clean arrays.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

# Tolerance headroom for unit-scale float64 quantities (cosines, softmax sums).
FLOAT_TOL = 1e-12

# Default step for finite-difference gradient checks.
FD_STEP = 1e-5


class ShapeError(ValueError):
    """Raised when array dimensions are inconsistent with an operation."""


def as_vector(values, name: str = "vector") -> np.ndarray:
    """Coerce to a finite, non-empty 1-d float64 array."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ShapeError(f"{name} must be a non-empty 1-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite, non-empty 2-d float64 array."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ShapeError(f"{name} must be a non-empty 2-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def cosine_similarity(u, v) -> float:
    """Cosine of the angle between two nonzero vectors of equal dimension."""
    u = as_vector(u, "u")
    v = as_vector(v, "v")
    if u.shape != v.shape:
        raise ShapeError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity is undefined for zero-norm input")
    return float(np.dot(u, v) / (nu * nv))


def stable_sigmoid(x):
    """Numerically stable logistic function, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def scaled_sigmoid_similarity(u, v, tau: float) -> float:
    """Sigmoid-squashed cosine similarity, sharpened by temperature tau.

    Returns 1 / (1 + exp(-cos(u, v) / tau)), a score in (0, 1) that is
    strictly increasing in the cosine similarity.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    s = cosine_similarity(u, v)
    return float(stable_sigmoid(np.float64(s / tau)))


def softmax_with_temperature(logits, tau: float) -> np.ndarray:
    """Temperature-scaled softmax, stabilized by max subtraction."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    z = as_vector(logits, "logits") / tau
    z -= z.max()
    e = np.exp(z)
    return e / e.sum()


def top_k_indices(scores, k: int) -> list[int]:
    """Indices of the k largest scores, descending, ties won by lowest index.

    If fewer than k entries exist all indices are returned; downstream graph
    builders handle short node lists.
    """
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    s = as_vector(scores, "scores")
    order = np.argsort(-s, kind="stable")
    return [int(i) for i in order[: min(k, s.size)]]


def finite_difference_gradient(
    f: Callable[[np.ndarray], float], x, h: float = FD_STEP
) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function at x."""
    if h <= 0:
        raise ValueError(f"h must be positive, got {h}")
    x = as_vector(x, "x")
    grad = np.empty_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = h
        fp = float(f(x + step))
        fm = float(f(x - step))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite function value near coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad

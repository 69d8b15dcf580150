"""Small dense numeric core.

Vectors and matrices are plain float64 ``numpy`` arrays; the helpers here
validate them at the boundary and provide reference primitives whose
accumulation order is fixed (left to right), so that hand-rolled oracles can
be compared bit-for-bit.
"""
from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not agree."""


def as_vector(data, dtype=np.float64) -> np.ndarray:
    """Copy ``data`` into a read-only 1-D array, rejecting NaN/Inf and empty input."""
    v = np.array(data, dtype=dtype)
    if v.ndim != 1:
        raise ShapeError(f"expected a 1-D vector, got shape {v.shape}")
    if v.size == 0:
        raise ShapeError("vector must have at least one element")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector contains non-finite values")
    v.flags.writeable = False
    return v


def as_matrix(data, dtype=np.float64) -> np.ndarray:
    """Copy ``data`` into a read-only row-major 2-D array of finite values."""
    m = np.array(data, dtype=dtype, order="C")
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    if m.size == 0:
        raise ShapeError("matrix must be non-empty")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite values")
    m.flags.writeable = False
    return m


def identity(n: int) -> np.ndarray:
    return as_matrix(np.eye(n))


def _check_same_len(u: np.ndarray, v: np.ndarray) -> None:
    if u.shape != v.shape:
        raise ShapeError(f"length mismatch: {u.shape} vs {v.shape}")


def matvec(W: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Return ``W @ x`` with each row accumulated over columns in order.

    The loop runs over columns and is vectorised over rows, so every output
    element sees exactly the summation order of a naive double loop.
    """
    W = np.asarray(W, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if W.ndim != 2 or x.ndim != 1 or W.shape[1] != x.shape[0]:
        raise ShapeError(f"cannot multiply {W.shape} by {x.shape}")
    out = np.zeros(W.shape[0])
    for j in range(W.shape[1]):
        out += W[:, j] * x[j]
    return out


def reduce_sum(v: np.ndarray) -> float:
    acc = 0.0
    for value in np.asarray(v, dtype=np.float64):
        acc += float(value)
    return acc


def reduce_mean(v: np.ndarray) -> float:
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ShapeError("mean of an empty vector")
    return reduce_sum(v) / v.size


def reduce_sumsq(v: np.ndarray) -> float:
    acc = 0.0
    for value in np.asarray(v, dtype=np.float64):
        acc += float(value) * float(value)
    return acc


def scale(v: np.ndarray, alpha: float) -> np.ndarray:
    return np.asarray(v, dtype=np.float64) * alpha


def shift(v: np.ndarray, delta: float) -> np.ndarray:
    return np.asarray(v, dtype=np.float64) + delta


def hadamard(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    _check_same_len(u, v)
    return u * v

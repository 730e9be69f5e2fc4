"""Dense matrix primitives with hand-written backward passes.

Every function accepts a 2-D array or a stack of them (leading batch axes);
the last two axes are always (rows, cols). Embeddings are stored one vector
per column, so normalization acts along axis -2 and softmax along axis -1.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

NORM_FLOOR = 1e-12


class DegenerateEmbeddingError(ValueError):
    """A column has (numerically) zero norm and cannot be projected to the sphere."""


class ShapeError(ValueError):
    pass


def as_matrix(M, dtype=np.float64) -> np.ndarray:
    M = np.asarray(M, dtype=dtype)
    if M.ndim < 2:
        raise ShapeError(f"expected at least 2 dimensions, got shape {M.shape}")
    if M.shape[-1] < 1 or M.shape[-2] < 1:
        raise ShapeError(f"empty matrix of shape {M.shape}")
    return M


def _column_norms(M: np.ndarray, floor: float) -> np.ndarray:
    norms = np.sqrt(np.sum(M * M, axis=-2, keepdims=True))
    if np.any(norms < floor):
        raise DegenerateEmbeddingError(
            f"column norm below {floor:g}; embedding has collapsed"
        )
    return norms


def l2_normalize_columns(M, floor: float = NORM_FLOOR) -> np.ndarray:
    M = as_matrix(M)
    return M / _column_norms(M, floor)


def l2_normalize_backward(M, upstream, floor: float = NORM_FLOOR) -> np.ndarray:
    """Pull ``upstream`` back through column normalization.

    For a column x with unit direction u = x/|x| the Jacobian is
    (I - u u^T) / |x|, so the radial part of the upstream gradient vanishes.
    """
    M = as_matrix(M)
    upstream = np.asarray(upstream, dtype=M.dtype)
    if upstream.shape != M.shape:
        raise ShapeError(f"upstream {upstream.shape} does not match input {M.shape}")
    norms = _column_norms(M, floor)
    u = M / norms
    radial = np.sum(u * upstream, axis=-2, keepdims=True)
    return (upstream - u * radial) / norms


def matmul(A, B) -> np.ndarray:
    A = as_matrix(A)
    B = as_matrix(B)
    if A.shape[-1] != B.shape[-2]:
        raise ShapeError(f"inner dimensions differ: {A.shape} @ {B.shape}")
    return A @ B


def matmul_backward(A, B, upstream) -> tuple[np.ndarray, np.ndarray]:
    upstream = np.asarray(upstream)
    return upstream @ np.swapaxes(B, -1, -2), np.swapaxes(A, -1, -2) @ upstream


def row_softmax(M, T: float = 1.0) -> np.ndarray:
    """Row-wise softmax of ``T * M``; the row max is subtracted before exp."""
    if not T > 0:
        raise ValueError(f"temperature must be positive, got {T}")
    Z = T * as_matrix(M)
    Z = Z - Z.max(axis=-1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=-1, keepdims=True)


def row_softmax_backward(P, upstream, T: float = 1.0) -> np.ndarray:
    """Gradient w.r.t. M given the forward output ``P = row_softmax(M, T)``."""
    upstream = np.asarray(upstream)
    inner = np.sum(upstream * P, axis=-1, keepdims=True)
    return T * P * (upstream - inner)


def finite_difference_check(
    f: Callable[[np.ndarray], float],
    X,
    analytic,
    h: float = 1e-6,
) -> float:
    """Max over entries of |central difference - analytic| / max(1, |analytic|)."""
    X = np.array(X, dtype=np.float64)
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != X.shape:
        raise ShapeError(f"analytic gradient {analytic.shape} vs input {X.shape}")
    numeric = np.empty_like(X)
    flat = X.reshape(-1)
    out = numeric.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + h
        fp = float(f(X))
        flat[idx] = orig - h
        fm = float(f(X))
        flat[idx] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value at entry {idx}")
        out[idx] = (fp - fm) / (2.0 * h)
    return float(np.max(np.abs(numeric - analytic) / np.maximum(1.0, np.abs(analytic))))

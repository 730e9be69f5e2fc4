"""Cycle association objective: affinity, soft assignment, cycle matrix, losses.

Embedding matrices are D x K with one unit vector per column. All forward
and backward functions here also accept stacks of matrices with a shared
shape (leading batch axes), which is how the trainer evaluates a minibatch
of frame pairs in one pass.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    ShapeError,
    as_matrix,
    l2_normalize_backward,
    l2_normalize_columns,
    matmul,
    matmul_backward,
    row_softmax,
    row_softmax_backward,
)

SYMMETRIC = "symmetric"
ASYMMETRIC = "asymmetric"


@dataclass(frozen=True)
class TemperatureConfig:
    epsilon: float = 0.1
    delta: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")


@dataclass(frozen=True)
class LossConfig:
    kind: str = ASYMMETRIC
    margin: float = 0.5
    temperature: TemperatureConfig = field(default_factory=TemperatureConfig)

    def __post_init__(self):
        if self.kind not in (SYMMETRIC, ASYMMETRIC):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if not 0.0 < self.margin < 1.0:
            raise ValueError(f"margin must lie in (0, 1), got {self.margin}")


def affinity(X1, X2) -> np.ndarray:
    """Pairwise cosine similarities S = X1^T X2 of unit-column embeddings."""
    X1 = as_matrix(X1)
    X2 = as_matrix(X2)
    if X1.shape[-2] != X2.shape[-2]:
        raise ShapeError(f"embedding dims differ: {X1.shape[-2]} vs {X2.shape[-2]}")
    return matmul(np.swapaxes(X1, -1, -2), X2)


def adaptive_temperature(K: int, cfg: TemperatureConfig = TemperatureConfig()) -> float:
    """Softmax temperature for rows of length K.

    T = ln[(delta (K - 1) + 1) / (1 - delta)] / epsilon, which for delta = 0.5
    is ln(K + 1) / epsilon. An entry that beats K - 1 equal competitors by
    exactly epsilon then receives probability (delta (K - 1) + 1) / K.
    """
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    d = cfg.delta
    return math.log((d * (K - 1) + 1.0) / (1.0 - d)) / cfg.epsilon


def soft_assign(S, T: float) -> np.ndarray:
    return row_softmax(S, T)


def cycle(A, Aprime) -> np.ndarray:
    return matmul(A, Aprime)


def _check_square(C) -> np.ndarray:
    C = as_matrix(C)
    if C.shape[-1] != C.shape[-2]:
        raise ShapeError(f"cycle matrix must be square, got {C.shape}")
    return C


def loss_symmetric(C):
    """Mean absolute deviation of the cycle matrix from the identity."""
    C = _check_square(C)
    K = C.shape[-1]
    out = np.abs(C - np.eye(K)).sum(axis=(-2, -1)) / K**2
    return float(out) if out.ndim == 0 else out


def loss_symmetric_backward(C) -> np.ndarray:
    C = _check_square(C)
    K = C.shape[-1]
    return np.sign(C - np.eye(K)) / K**2


def _margin_terms(C: np.ndarray, m: float):
    K = C.shape[-1]
    diag = np.diagonal(C, axis1=-2, axis2=-1)
    off = np.where(np.eye(K, dtype=bool), -np.inf, C)
    row_arg = off.argmax(axis=-1)
    col_arg = off.argmax(axis=-2)
    row_gap = off.max(axis=-1) - diag + m
    col_gap = off.max(axis=-2) - diag + m
    return row_gap, col_gap, row_arg, col_arg


def _check_margin(m: float):
    if not 0.0 < m < 1.0:
        raise ValueError(f"margin must lie in (0, 1), got {m}")


def loss_asymmetric(C, m: float = 0.5):
    """Triplet-style hinge: each diagonal entry must beat its row and column
    competitors by at least ``m``. A 1 x 1 cycle matrix has no competitors and
    contributes zero loss."""
    C = _check_square(C)
    _check_margin(m)
    K = C.shape[-1]
    if K == 1:
        warnings.warn("single-instance cycle matrix carries no training signal", RuntimeWarning)
        out = np.zeros(C.shape[:-2])
    else:
        row_gap, col_gap, _, _ = _margin_terms(C, m)
        out = (np.maximum(row_gap, 0.0) + np.maximum(col_gap, 0.0)).sum(axis=-1) / K
    return float(out) if out.ndim == 0 else out


def loss_asymmetric_backward(C, m: float = 0.5) -> np.ndarray:
    """Subgradient of :func:`loss_asymmetric`.

    Ties among competitors send the gradient to the first maximizer in
    row-major order; a hinge sitting exactly at zero is treated as inactive.
    """
    C = _check_square(C)
    _check_margin(m)
    K = C.shape[-1]
    grad = np.zeros_like(C)
    if K == 1:
        return grad
    row_gap, col_gap, row_arg, col_arg = _margin_terms(C, m)
    g = grad.reshape(-1, K * K)
    batch = np.arange(g.shape[0])[:, None]
    diag = np.arange(K) * (K + 1)
    row_w = (row_gap > 0).reshape(-1, K) / K
    col_w = (col_gap > 0).reshape(-1, K) / K
    rows = np.arange(K)
    np.add.at(g, (batch, rows * K + row_arg.reshape(-1, K)), row_w)
    np.add.at(g, (batch, col_arg.reshape(-1, K) * K + rows), col_w)
    np.add.at(g, (batch, np.broadcast_to(diag, row_w.shape)), -(row_w + col_w))
    return grad


@dataclass
class CycasTape:
    """Intermediates kept by :func:`cycas_forward` for the backward pass.

    Everything is stored in the swapped orientation (K1 <= K2); ``swapped``
    records whether the caller's X1 and X2 were exchanged.
    """

    X1: np.ndarray
    X2: np.ndarray
    U1: np.ndarray
    U2: np.ndarray
    S: np.ndarray
    A: np.ndarray
    Aprime: np.ndarray
    C: np.ndarray
    T: float
    Tprime: float
    swapped: bool
    cfg: LossConfig


def cycas_forward(X1, X2, cfg: LossConfig = LossConfig()):
    """Cycle association loss for one pair (or a stack of equally sized pairs).

    Returns ``(loss, tape)``; ``loss`` is a float for a single pair and an
    array over the leading axes otherwise.
    """
    X1 = as_matrix(X1)
    X2 = as_matrix(X2)
    if X1.shape[-2] != X2.shape[-2]:
        raise ShapeError(f"embedding dims differ: {X1.shape[-2]} vs {X2.shape[-2]}")
    swapped = X1.shape[-1] > X2.shape[-1]
    if swapped:
        X1, X2 = X2, X1
    U1 = l2_normalize_columns(X1)
    U2 = l2_normalize_columns(X2)
    K1, K2 = U1.shape[-1], U2.shape[-1]
    S = affinity(U1, U2)
    T = adaptive_temperature(K2, cfg.temperature)
    Tp = adaptive_temperature(K1, cfg.temperature)
    A = soft_assign(S, T)
    Ap = soft_assign(np.swapaxes(S, -1, -2), Tp)
    C = cycle(A, Ap)
    if cfg.kind == SYMMETRIC:
        loss = loss_symmetric(C)
    else:
        loss = loss_asymmetric(C, cfg.margin)
    return loss, CycasTape(X1, X2, U1, U2, S, A, Ap, C, T, Tp, swapped, cfg)


def cycas_backward(tape: CycasTape, upstream=1.0) -> tuple[np.ndarray, np.ndarray]:
    """Gradients (dX1, dX2) of the loss w.r.t. the caller's original arguments.

    ``upstream`` scales the loss of each pair (scalar, or one weight per pair
    for stacked input).
    """
    if not isinstance(tape, CycasTape):
        raise TypeError(f"expected CycasTape, got {type(tape).__name__}")
    if tape.C.shape[-1] != tape.A.shape[-2] or tape.A.shape[-1] != tape.Aprime.shape[-2]:
        raise ValueError("inconsistent tape shapes")
    cfg = tape.cfg
    if cfg.kind == SYMMETRIC:
        dC = loss_symmetric_backward(tape.C)
    else:
        dC = loss_asymmetric_backward(tape.C, cfg.margin)
    w = np.asarray(upstream, dtype=np.float64)
    dC = dC * w.reshape(w.shape + (1, 1))

    dA, dAp = matmul_backward(tape.A, tape.Aprime, dC)
    dS = row_softmax_backward(tape.A, dA, tape.T)
    dS = dS + np.swapaxes(row_softmax_backward(tape.Aprime, dAp, tape.Tprime), -1, -2)
    dU1 = tape.U2 @ np.swapaxes(dS, -1, -2)
    dU2 = tape.U1 @ dS
    dX1 = l2_normalize_backward(tape.X1, dU1)
    dX2 = l2_normalize_backward(tape.X2, dU2)
    if tape.swapped:
        dX1, dX2 = dX2, dX1
    return dX1, dX2


def _solve_min_cost(cost: list[list[float]], n: int, m: int) -> list[int]:
    # Shortest augmenting path with row/column potentials, n <= m.
    # Columns are scanned in increasing order and only a strictly smaller
    # reduced cost displaces the incumbent, so ties go to the lowest index.
    inf = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    p = [0] * (m + 1)
    way = [0] * (m + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            row = cost[i0 - 1]
            ui0 = u[i0]
            delta = inf
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    assignment = [-1] * n
    for j in range(1, m + 1):
        if p[j]:
            assignment[p[j] - 1] = j - 1
    return assignment


def linear_assignment(S) -> np.ndarray:
    """Column matched to each row under the max-similarity one-to-one
    assignment; -1 for rows left unmatched when there are more rows than
    columns."""
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2:
        raise ShapeError(f"expected a 2-D affinity matrix, got {S.shape}")
    if not np.all(np.isfinite(S)):
        raise ValueError("affinity matrix has non-finite entries")
    n, m = S.shape
    if n <= m:
        return np.array(_solve_min_cost((-S).tolist(), n, m), dtype=np.int64)
    cols = _solve_min_cost((-S.T).tolist(), m, n)
    rows = np.full(n, -1, dtype=np.int64)
    for j, i in enumerate(cols):
        rows[i] = j
    return rows


def hungarian(S) -> np.ndarray:
    """Hard 0/1 assignment matrix maximizing total similarity."""
    S = np.asarray(S, dtype=np.float64)
    match = linear_assignment(S)
    A = np.zeros_like(S)
    hit = match >= 0
    A[np.flatnonzero(hit), match[hit]] = 1.0
    return A


def hard_cycle_consistency(S) -> float:
    """Fraction of set-1 instances that a hard forward then backward matching
    brings back to themselves."""
    S = np.asarray(S, dtype=np.float64)
    fwd = linear_assignment(S)
    bwd = linear_assignment(S.T)
    K1 = S.shape[0]
    back = sum(1 for i in range(K1) if fwd[i] >= 0 and bwd[fwd[i]] == i)
    return back / K1

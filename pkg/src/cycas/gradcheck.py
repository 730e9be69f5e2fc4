"""Finite-difference verification of every hand-written backward pass.

Each check draws a random instance, projects the op's output onto a fixed
random direction to get a scalar, and compares the analytic gradient with
central differences. Instances near a kink of a piecewise-linear loss (a
hinge at zero, two tied competitors, |C - I| at zero) are redrawn.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import association as assoc
from . import tensor
from .trainer import make_embedder

TOLERANCE = 1e-5
STEP = 1e-6
# distance from any kink, in units of the loss input, below which an
# instance is considered "on a tie" and redrawn
KINK_CLEARANCE = 1e-4
MAX_REDRAWS = 1000

OPS = (
    "l2_normalize",
    "matmul",
    "row_softmax",
    "loss_symmetric",
    "loss_asymmetric",
    "cycas_symmetric",
    "cycas_asymmetric",
    "embedder_linear",
    "embedder_two_layer",
)


@dataclass
class GradcheckReport:
    errors: dict[str, float]
    n_trials: int
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.errors.values())

    def lines(self) -> list[str]:
        out = []
        for op, err in self.errors.items():
            status = "ok" if err < self.tolerance else "FAIL"
            out.append(f"{op:20s} max_rel_err={err:.3e} {status}")
        return out


def _dims(rng):
    return int(rng.integers(2, 9)), int(rng.integers(2, 9)), int(rng.integers(2, 17))


def _off_kink(C: np.ndarray, kind: str, m: float) -> bool:
    K = C.shape[-1]
    if kind == assoc.SYMMETRIC:
        return bool(np.min(np.abs(C - np.eye(K))) > KINK_CLEARANCE)
    if K == 1:
        return True
    row_gap, col_gap, _, _ = assoc._margin_terms(C, m)
    if min(np.min(np.abs(row_gap)), np.min(np.abs(col_gap))) <= KINK_CLEARANCE:
        return False
    off = np.where(np.eye(K, dtype=bool), -np.inf, C)
    for M in (off, off.T):
        top2 = np.sort(M, axis=-1)[:, -2:]
        if np.min(top2[:, 1] - top2[:, 0]) <= KINK_CLEARANCE:
            return False
    return True


def _check_l2(rng):
    K, _, D = _dims(rng)
    X = rng.standard_normal((D, K))
    R = rng.standard_normal((D, K))
    an = tensor.l2_normalize_backward(X, R)
    return tensor.finite_difference_check(lambda Y: np.sum(tensor.l2_normalize_columns(Y) * R), X, an, STEP)


def _check_matmul(rng):
    K1, K2, D = _dims(rng)
    A = rng.standard_normal((K1, D))
    B = rng.standard_normal((D, K2))
    R = rng.standard_normal((K1, K2))
    dA, dB = tensor.matmul_backward(A, B, R)
    ea = tensor.finite_difference_check(lambda Y: np.sum(tensor.matmul(Y, B) * R), A, dA, STEP)
    eb = tensor.finite_difference_check(lambda Y: np.sum(tensor.matmul(A, Y) * R), B, dB, STEP)
    return max(ea, eb)


def _check_softmax(rng):
    K1, K2, _ = _dims(rng)
    T = float(rng.uniform(1.0, 30.0))
    M = rng.uniform(-1.0, 1.0, (K1, K2))
    R = rng.standard_normal((K1, K2))
    an = tensor.row_softmax_backward(tensor.row_softmax(M, T), R, T)
    return tensor.finite_difference_check(lambda Y: np.sum(tensor.row_softmax(Y, T) * R), M, an, STEP)


def _check_loss(kind):
    def check(rng):
        m = 0.5
        for _ in range(MAX_REDRAWS):
            K = int(rng.integers(2, 9))
            C = rng.uniform(0.0, 1.0, (K, K))
            if _off_kink(C, kind, m):
                break
        if kind == assoc.SYMMETRIC:
            f, an = assoc.loss_symmetric, assoc.loss_symmetric_backward(C)
        else:
            f, an = (lambda Y: assoc.loss_asymmetric(Y, m)), assoc.loss_asymmetric_backward(C, m)
        return tensor.finite_difference_check(f, C, an, STEP)
    return check


def _draw_pair(rng, kind, cfg):
    for _ in range(MAX_REDRAWS):
        K1, K2, D = _dims(rng)
        X1 = rng.standard_normal((D, K1))
        X2 = rng.standard_normal((D, K2))
        _, tape = assoc.cycas_forward(X1, X2, cfg)
        if _off_kink(tape.C, kind, cfg.margin):
            return X1, X2
    raise RuntimeError("could not draw an off-kink instance")


def _check_cycas(kind):
    cfg = assoc.LossConfig(kind=kind)

    def check(rng):
        X1, X2 = _draw_pair(rng, kind, cfg)
        _, tape = assoc.cycas_forward(X1, X2, cfg)
        d1, d2 = assoc.cycas_backward(tape)
        e1 = tensor.finite_difference_check(lambda Y: assoc.cycas_forward(Y, X2, cfg)[0], X1, d1, STEP)
        e2 = tensor.finite_difference_check(lambda Y: assoc.cycas_forward(X1, Y, cfg)[0], X2, d2, STEP)
        return max(e1, e2)
    return check


def _check_embedder(two_layer):
    def check(rng):
        kind = assoc.ASYMMETRIC if rng.random() < 0.5 else assoc.SYMMETRIC
        cfg = assoc.LossConfig(kind=kind)
        for _ in range(MAX_REDRAWS):
            K1, K2, D_obs = _dims(rng)
            D = int(rng.integers(2, 17))
            hidden = int(rng.integers(2, 9)) if two_layer else None
            model = make_embedder(D_obs, D, hidden=hidden, seed=int(rng.integers(2**31)))
            X = rng.standard_normal((D_obs, K1 + K2))
            U, cache = model.forward(X)
            loss, tape = assoc.cycas_forward(U[:, :K1], U[:, K1:], cfg)
            if _off_kink(tape.C, kind, cfg.margin):
                break
        else:
            raise RuntimeError("could not draw an off-kink instance")
        d1, d2 = assoc.cycas_backward(tape)
        grads = model.backward(cache, np.concatenate([d1, d2], axis=1))
        worst = 0.0
        for name, P in model.params.items():
            def f(Y, name=name):
                saved = model.params[name]
                model.params[name] = Y
                try:
                    V, _ = model.forward(X)
                    return assoc.cycas_forward(V[:, :K1], V[:, K1:], cfg)[0]
                finally:
                    model.params[name] = saved
            worst = max(worst, tensor.finite_difference_check(f, P, grads[name], STEP))
        return worst
    return check


_CHECKS = {
    "l2_normalize": _check_l2,
    "matmul": _check_matmul,
    "row_softmax": _check_softmax,
    "loss_symmetric": _check_loss(assoc.SYMMETRIC),
    "loss_asymmetric": _check_loss(assoc.ASYMMETRIC),
    "cycas_symmetric": _check_cycas(assoc.SYMMETRIC),
    "cycas_asymmetric": _check_cycas(assoc.ASYMMETRIC),
    "embedder_linear": _check_embedder(False),
    "embedder_two_layer": _check_embedder(True),
}


def run_gradcheck(n_trials: int = 100, seed: int = 0, ops=OPS) -> GradcheckReport:
    """Max relative error per op over ``n_trials`` random instances each."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    errors = {}
    for i, op in enumerate(ops):
        rng = np.random.default_rng([seed, i])
        errors[op] = max(_CHECKS[op](rng) for _ in range(n_trials))
    return GradcheckReport(errors, n_trials)

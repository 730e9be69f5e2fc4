"""Cross-camera retrieval metrics, trivial-solution audit and ablation sweeps."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .association import ASYMMETRIC, SYMMETRIC, affinity, hard_cycle_consistency, linear_assignment
from .simulator import IdentityWorld, Instance, SymmetrySchedule, inter_sample, observe, stream_rng
from .tensor import l2_normalize_columns
from .trainer import TrainConfig, make_embedder, train_two_stage

TRIVIAL_CONSISTENCY = 0.9
TRIVIAL_IDENTITY_MATCH = 0.5


@dataclass(frozen=True)
class RetrievalMetrics:
    rank1: float
    mAP: float
    n_queries: int

    def as_dict(self) -> dict:
        return {"rank1": self.rank1, "mAP": self.mAP, "n_queries": self.n_queries}


def average_precision(ranked_matches: np.ndarray) -> float:
    """AP of a 0/1 relevance vector already sorted by decreasing score."""
    ranked_matches = np.asarray(ranked_matches, dtype=bool)
    n_rel = ranked_matches.sum()
    if n_rel == 0:
        return 0.0
    hits = np.cumsum(ranked_matches)
    precision = hits / np.arange(1, len(ranked_matches) + 1)
    return float(np.sum(precision[ranked_matches]) / n_rel)


def retrieval_metrics(
    q_emb: np.ndarray,
    q_ids: Sequence[int],
    q_cams: Sequence[int],
    g_emb: np.ndarray,
    g_ids: Sequence[int],
    g_cams: Sequence[int],
) -> tuple[RetrievalMetrics, np.ndarray]:
    """Rank-1 and mAP from unit-column embeddings (D x n).

    Gallery entries that share both identity and camera with the query are
    dropped before ranking. Returns the metrics and the per-query AP array.
    """
    q_ids, q_cams = np.asarray(q_ids), np.asarray(q_cams)
    g_ids, g_cams = np.asarray(g_ids), np.asarray(g_cams)
    sims = q_emb.T @ g_emb
    top1, aps = [], []
    for qi in range(len(q_ids)):
        keep = ~((g_ids == q_ids[qi]) & (g_cams == q_cams[qi]))
        order = np.argsort(-sims[qi, keep], kind="stable")
        matches = g_ids[keep][order] == q_ids[qi]
        if not matches.any():
            continue
        top1.append(bool(matches[0]))
        aps.append(average_precision(matches))
    if not aps:
        raise ValueError("no query has a valid cross-camera match in the gallery")
    aps = np.asarray(aps)
    return RetrievalMetrics(float(np.mean(top1)), float(np.mean(aps)), len(aps)), aps


def evaluate_retrieval(model, world: IdentityWorld, n_ids: int | None = None,
                       rng: np.random.Generator | None = None,
                       query_camera: int | None = None) -> RetrievalMetrics:
    """Single-query cross-camera protocol.

    One observation of every identity is drawn from every camera. ``n_ids``
    identities are queried from ``query_camera`` (every camera in turn when
    None) against a gallery of all identities seen by the remaining cameras;
    identities that are not queried act as distractors.
    """
    if world.N < 2:
        raise ValueError("need at least 2 identities")
    if world.n_cameras < 2:
        raise ValueError("need at least 2 cameras")
    rng = np.random.default_rng(0) if rng is None else rng
    n_ids = world.N if n_ids is None else n_ids
    query_ids = np.sort(rng.choice(world.N, size=n_ids, replace=False))
    views = [[observe(world, i, c, rng) for i in range(world.N)] for c in range(world.n_cameras)]
    embedded = [model.embed(v) for v in views]
    cams = range(world.n_cameras) if query_camera is None else [query_camera]
    top1, aps = [], []
    for q in cams:
        others = [c for c in range(world.n_cameras) if c != q]
        gallery = [x for c in others for x in views[c]]
        metrics, ap = retrieval_metrics(
            embedded[q][:, query_ids], query_ids, np.full(n_ids, q),
            np.concatenate([embedded[c] for c in others], axis=1),
            [x.identity for x in gallery], [x.camera for x in gallery],
        )
        top1.append(metrics.rank1 * metrics.n_queries)
        aps.append(ap)
    aps = np.concatenate(aps)
    return RetrievalMetrics(float(np.sum(top1) / len(aps)), float(np.mean(aps)), len(aps))


class CameraInverseEmbedder:
    """Ground-truth embedder: knows each instance's camera and the noise model.

    It undoes the camera map, then takes the generalized least-squares
    estimate of the point in the prototype subspace, which discounts the
    camera's nuisance directions.
    """

    def __init__(self, world: IdentityWorld):
        self.world = world
        self._inv = np.linalg.inv(world.transforms)
        _, sv, Vt = np.linalg.svd(world.prototypes, full_matrices=False)
        B = Vt[sv > 1e-9 * sv[0]].T  # orthonormal basis of the prototype span
        self._readout = []
        for c in range(world.n_cameras):
            V = world.nuisance[c]
            cov = self._inv[c] @ (np.eye(world.D_obs) + V @ V.T) @ self._inv[c].T
            if world.sigma_intra == 0:
                cov = np.eye(world.D_obs)
            W = np.linalg.solve(cov, B)  # cov^-1 B
            self._readout.append(B @ np.linalg.solve(B.T @ W, W.T))

    def _prototype_space(self, instances: Sequence[Instance]) -> np.ndarray:
        cols = [self._readout[x.camera] @ (self._inv[x.camera] @ (x.observation - self.world.biases[x.camera]))
                for x in instances]
        return np.stack(cols, axis=1)

    def embed(self, instances: Sequence[Instance]) -> np.ndarray:
        return l2_normalize_columns(self._prototype_space(instances))


class CyclicShiftEmbedder(CameraInverseEmbedder):
    """Adversarial embedder: camera c sends identity i to the prototype of
    identity (i - c * shift) mod N, so cross-camera matches are consistent
    but always pair different people."""

    def __init__(self, world: IdentityWorld, shift: int = 1):
        super().__init__(world)
        self.shift = shift

    def embed(self, instances: Sequence[Instance]) -> np.ndarray:
        P = self._prototype_space(instances)
        nearest = np.argmax(self.world.prototypes @ P, axis=0)
        cams = np.array([x.camera for x in instances])
        shifted = (nearest - cams * self.shift) % self.world.N
        return l2_normalize_columns(self.world.prototypes[shifted].T)


class RandomEmbedder:
    """Untrained linear embedder at a fixed random initialization."""

    def __init__(self, D_obs: int, D: int, seed: int = 0):
        self.model = make_embedder(D_obs, D, seed=seed)

    def embed(self, instances):
        return self.model.embed(instances)


@dataclass(frozen=True)
class TrivialReport:
    consistency: float
    identity_match: float

    @property
    def flagged(self) -> bool:
        return self.consistency > TRIVIAL_CONSISTENCY and self.identity_match < TRIVIAL_IDENTITY_MATCH

    def as_dict(self) -> dict:
        return {"consistency": self.consistency, "identity_match": self.identity_match,
                "flagged": self.flagged}


def detect_trivial_solution(model, world: IdentityWorld, n_pairs: int = 20, K: int = 8,
                            seed: int = 0) -> TrivialReport:
    """Hard-match symmetric inter-camera pairs and compare against hidden labels."""
    rng = np.random.default_rng(seed)
    K = min(K, world.N)
    consistency, hits, total = [], 0, 0
    for _ in range(n_pairs):
        pair = inter_sample(world, K, 1.0, rng)
        S = affinity(model.embed(pair.set1), model.embed(pair.set2))
        consistency.append(hard_cycle_consistency(S))
        for i, j in enumerate(linear_assignment(S)):
            if j >= 0:
                hits += pair.set1[i].identity == pair.set2[j].identity
                total += 1
    return TrivialReport(float(np.mean(consistency)), hits / total)


@dataclass
class SweepPoint:
    tau_mean: float
    seed: int
    metrics: RetrievalMetrics


@dataclass
class SweepResult:
    axis: str
    fixed_other: float
    grid: list[SweepPoint] = field(default_factory=list)

    def by_tau(self) -> dict[float, list[float]]:
        out: dict[float, list[float]] = {}
        for p in self.grid:
            out.setdefault(p.tau_mean, []).append(p.metrics.rank1)
        return out

    def summary(self) -> dict[float, tuple[float, float]]:
        """Mean rank-1 and its standard error per grid value."""
        return {t: mean_and_stderr(v) for t, v in self.by_tau().items()}


def mean_and_stderr(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    if len(v) < 2:
        return float(v.mean()), 0.0
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(len(v)))


def schedule_for(axis: str, tau_mean: float, fixed_other: float) -> SymmetrySchedule:
    if axis == "alpha":
        return SymmetrySchedule(tau_alpha_mean=tau_mean, tau_beta_mean=fixed_other)
    if axis == "beta":
        return SymmetrySchedule(tau_alpha_mean=fixed_other, tau_beta_mean=tau_mean)
    raise ValueError(f"axis must be 'alpha' or 'beta', got {axis!r}")


def train_and_evaluate(world: IdentityWorld, cfg: TrainConfig, D: int, hidden: int | None = None,
                       eval_seed: int = 12345):
    """Fresh model seeded by ``cfg.seed``, trained then evaluated."""
    model = make_embedder(world.D_obs, D, hidden=hidden, seed=cfg.seed)
    model, log = train_two_stage(world, model, cfg)
    metrics = evaluate_retrieval(model, world, rng=np.random.default_rng(eval_seed))
    return model, log, metrics


def run_sweep_point(world, cfg: TrainConfig, axis: str, tau_mean: float, fixed_other: float,
                    seed: int, D: int, hidden: int | None = None) -> SweepPoint:
    cfg = replace(cfg, schedule=schedule_for(axis, tau_mean, fixed_other), seed=seed)
    _, _, metrics = train_and_evaluate(world, cfg, D, hidden)
    return SweepPoint(tau_mean, seed, metrics)


def sweep_symmetry(world: IdentityWorld, cfg: TrainConfig, axis: str, grid: Sequence[float],
                   fixed_other: float, n_seeds: int, D: int | None = None,
                   hidden: int | None = None, seeds: Sequence[int] | None = None) -> SweepResult:
    """Retrain from scratch for every (grid value, seed); per-batch tau is drawn
    around the grid value by the schedule."""
    if not grid:
        raise ValueError("grid must be nonempty")
    for t in grid:
        if not 0.0 < t <= 1.0:
            raise ValueError(f"grid values must lie in (0, 1], got {t}")
    D = world.D_obs if D is None else D
    seeds = list(range(n_seeds)) if seeds is None else list(seeds)
    result = SweepResult(axis, fixed_other)
    for t in grid:
        for s in seeds:
            result.grid.append(run_sweep_point(world, cfg, axis, t, fixed_other, s, D, hidden))
    return result


def compare_losses(world: IdentityWorld, cfg: TrainConfig, data: str = "asymmetric",
                   D: int | None = None, hidden: int | None = None):
    """Train with each loss on the same seed and data stream.

    ``data`` picks the symmetry: 'asymmetric' is (0.9, 0.6), 'symmetric' is
    (1, 1). Returns [(kind, metrics, log), ...]; the logs' ``data_digest``
    fields certify that both runs consumed identical batches.
    """
    if data == "asymmetric":
        schedule = SymmetrySchedule(0.9, 0.6)
    elif data == "symmetric":
        schedule = SymmetrySchedule(1.0, 1.0)
    else:
        raise ValueError(f"data must be 'symmetric' or 'asymmetric', got {data!r}")
    D = world.D_obs if D is None else D
    rows = []
    for kind in (SYMMETRIC, ASYMMETRIC):
        run_cfg = replace(cfg, schedule=schedule, loss=replace(cfg.loss, kind=kind))
        _, log, metrics = train_and_evaluate(world, run_cfg, D, hidden)
        rows.append((kind, metrics, log))
    return rows


ALPHA_GAP_TOLERANCE = 0.05


def alpha_endpoint_gap(result: SweepResult) -> float:
    """|mean rank-1 at the largest grid value - mean at the smallest|."""
    summary = result.summary()
    lo, hi = min(summary), max(summary)
    return abs(summary[hi][0] - summary[lo][0])


def monotone_with_tolerance(result: SweepResult, max_inversions: int = 1) -> bool:
    """Mean rank-1 non-decreasing along the grid, except for at most
    ``max_inversions`` drops, each no larger than the standard error of the
    difference between the two neighbouring means."""
    summary = result.summary()
    taus = sorted(summary)
    inversions = 0
    for a, b in zip(taus, taus[1:]):
        (ma, sa), (mb, sb) = summary[a], summary[b]
        if mb < ma:
            if ma - mb > np.hypot(sa, sb):
                return False
            inversions += 1
    return inversions <= max_inversions

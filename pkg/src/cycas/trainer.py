"""Learned embedder and the two-stage (intra, then intra + inter) schedule."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .association import LossConfig, cycas_backward, cycas_forward, hard_cycle_consistency
from .simulator import (
    INTER,
    INTRA,
    FramePair,
    IdentityWorld,
    Instance,
    SymmetrySchedule,
    inter_sample_batch,
    intra_sample_batch,
    stream_rng,
)
from .tensor import ShapeError, l2_normalize_backward, l2_normalize_columns

CHECKPOINT_FORMAT_VERSION = 1
LOG_COLUMNS = ("iter", "stage", "loss_intra", "loss_inter", "hard_cc_rate")
TIMING_COLUMNS = ("iter", "seconds")


class NumericalAbort(FloatingPointError):
    def __init__(self, iteration: int, message: str = "non-finite loss"):
        super().__init__(f"{message} at iteration {iteration}")
        self.iteration = iteration


class CheckpointError(ValueError):
    pass


class LearnedEmbedder:
    """Affine map (optionally two, with tanh between) followed by column
    normalization. Parameters live in ``self.params`` as float64 arrays."""

    def __init__(self, params: dict[str, np.ndarray]):
        if "W2" in params:
            expected = ("W1", "b1", "W2", "b2")
        else:
            expected = ("W1", "b1")
        if tuple(sorted(params)) != tuple(sorted(expected)):
            raise ValueError(f"parameter names {sorted(params)} do not match {expected}")
        self.params = {k: np.array(params[k], dtype=np.float64) for k in expected}

    @property
    def two_layer(self) -> bool:
        return "W2" in self.params

    @property
    def input_dim(self) -> int:
        return self.params["W1"].shape[1]

    @property
    def output_dim(self) -> int:
        W = self.params["W2"] if self.two_layer else self.params["W1"]
        return W.shape[0]

    def copy(self) -> "LearnedEmbedder":
        return LearnedEmbedder({k: v.copy() for k, v in self.params.items()})

    def forward(self, X: np.ndarray):
        """Embed observation columns X (..., D_obs, K). Returns (U, cache)."""
        if X.shape[-2] != self.input_dim:
            raise ShapeError(f"observation dim {X.shape[-2]} != model input {self.input_dim}")
        p = self.params
        Z1 = p["W1"] @ X + p["b1"][:, None]
        if self.two_layer:
            H = np.tanh(Z1)
            Z = p["W2"] @ H + p["b2"][:, None]
        else:
            H = None
            Z = Z1
        return l2_normalize_columns(Z), (X, H, Z)

    def backward(self, cache, dU: np.ndarray) -> dict[str, np.ndarray]:
        X, H, Z = cache
        dZ = l2_normalize_backward(Z, dU)
        grads = {}
        if self.two_layer:
            grads["W2"] = _flat_columns(dZ).T @ _flat_columns(H)
            grads["b2"] = _flat_columns(dZ).sum(axis=0)
            dZ = (self.params["W2"].T @ dZ) * (1.0 - H * H)
        grads["W1"] = _flat_columns(dZ).T @ _flat_columns(X)
        grads["b1"] = _flat_columns(dZ).sum(axis=0)
        return grads

    def embed(self, instances: Sequence[Instance]) -> np.ndarray:
        X = np.stack([x.observation for x in instances], axis=1)
        return self.forward(X)[0]


def _flat_columns(M: np.ndarray) -> np.ndarray:
    # (..., d, K) -> (n_columns, d), columns ordered batch-major
    return np.swapaxes(M, -1, -2).reshape(-1, M.shape[-2])


def make_embedder(
    D_obs: int,
    D: int,
    hidden: int | None = None,
    seed: int = 0,
    init: str = "random",
) -> LearnedEmbedder:
    """``init='identity'`` gives W = I, b = 0 (single layer, D == D_obs only)."""
    if init == "identity":
        if hidden is not None or D != D_obs:
            raise ValueError("identity init needs a single layer with D == D_obs")
        return LearnedEmbedder({"W1": np.eye(D), "b1": np.zeros(D)})
    if init != "random":
        raise ValueError(f"unknown init {init!r}")
    rng = np.random.default_rng(seed)
    if hidden is None:
        return LearnedEmbedder({
            "W1": rng.standard_normal((D, D_obs)) / np.sqrt(D_obs),
            "b1": np.zeros(D),
        })
    return LearnedEmbedder({
        "W1": rng.standard_normal((hidden, D_obs)) / np.sqrt(D_obs),
        "b1": np.zeros(hidden),
        "W2": rng.standard_normal((D, hidden)) / np.sqrt(hidden),
        "b2": np.zeros(D),
    })


def embed(model, instances: Sequence[Instance]) -> np.ndarray:
    """D x K unit-column embedding of ``instances`` under any embedder."""
    return model.embed(instances)


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: dict, grads: dict) -> None:
        for k in params:
            params[k] -= self.lr * grads[k]


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k in params:
            g = grads[k]
            m = self.m.get(k, np.zeros_like(g))
            v = self.v.get(k, np.zeros_like(g))
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self.m[k], self.v[k] = m, v
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(name: str, lr: float):
    if name == "sgd":
        return SGD(lr)
    if name == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer {name!r}")


@dataclass
class TrainConfig:
    pairs_per_batch: int = 8
    instances_per_frame: int = 16
    stage1_iters: int = 300
    stage2_iters: int = 1200
    stage2_mode: str = "mixed"  # "mixed" or "inter" (no intra pairs in stage 2)
    learning_rate: float = 5e-3
    optimizer: str = "adam"
    loss: LossConfig = field(default_factory=LossConfig)
    schedule: SymmetrySchedule = field(default_factory=SymmetrySchedule)
    frame_gap: int = 1
    cc_every: int = 25
    seed: int = 0

    def __post_init__(self):
        if self.pairs_per_batch < 1:
            raise ValueError("pairs_per_batch must be >= 1")
        if self.stage1_iters < 0 or self.stage2_iters < 0:
            raise ValueError("iteration counts must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.stage2_mode not in ("mixed", "inter"):
            raise ValueError(f"unknown stage2_mode {self.stage2_mode!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.cc_every < 1:
            raise ValueError("cc_every must be >= 1")


@dataclass
class StepResult:
    loss: float
    loss_intra: float | None
    loss_inter: float | None
    hard_cc_rate: float | None


@dataclass
class TrainLog:
    records: list[dict] = field(default_factory=list)
    data_digest: str = ""

    def append(self, record: dict) -> None:
        if self.records and record["iter"] <= self.records[-1]["iter"]:
            raise ValueError("iteration indices must increase")
        self.records.append(record)

    def to_csv(self, with_seconds: bool = False) -> str:
        """CSV text; wall-clock seconds are left out unless requested, so the
        default output is reproducible byte for byte."""
        cols = LOG_COLUMNS + (("seconds",) if with_seconds else ())
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.records:
            w.writerow(["" if r.get(c) is None else _fmt(r[c]) for c in cols])
        return buf.getvalue()

    def timing_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TIMING_COLUMNS)
        for r in self.records:
            w.writerow([r["iter"], f"{r['seconds']:.6f}"])
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _group_pairs(batch: Sequence[FramePair]):
    groups: dict[tuple, list[int]] = {}
    for idx, pair in enumerate(batch):
        groups.setdefault((pair.kind, len(pair.set1), len(pair.set2)), []).append(idx)
    return groups


def batch_loss_and_grads(model: LearnedEmbedder, batch: Sequence[FramePair], loss_cfg: LossConfig,
                         with_cc: bool = False):
    """Weighted batch loss (mean intra + mean inter) and parameter gradients."""
    if not batch:
        raise ValueError("empty batch")
    counts = {INTRA: 0, INTER: 0}
    for pair in batch:
        counts[pair.kind] += 1
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    sums = {INTRA: 0.0, INTER: 0.0}
    cc = []
    for (kind, _, _), idx in sorted(_group_pairs(batch).items()):
        obs = [batch[i].observations() for i in idx]
        # both frames go through the embedder as one (B, D_obs, K1 + K2) stack
        K1 = obs[0][0].shape[1]
        X = np.stack([np.concatenate(o, axis=1) for o in obs])
        U, cache = model.forward(X)
        losses, tape = cycas_forward(U[..., :K1], U[..., K1:], loss_cfg)
        losses = np.atleast_1d(losses)
        sums[kind] += float(np.sum(losses))
        dU1, dU2 = cycas_backward(tape, np.full(len(idx), 1.0 / counts[kind]))
        g = model.backward(cache, np.concatenate([dU1, dU2], axis=-1))
        for k in grads:
            grads[k] += g[k]
        if with_cc and np.all(np.isfinite(tape.S)):
            cc.extend(hard_cycle_consistency(S) for S in tape.S)
    means = {k: (sums[k] / counts[k] if counts[k] else None) for k in sums}
    total = sum(v for v in means.values() if v is not None)
    return StepResult(total, means[INTRA], means[INTER], float(np.mean(cc)) if cc else None), grads


def train_step(model: LearnedEmbedder, batch: Sequence[FramePair], cfg: TrainConfig,
               optimizer=None, iteration: int = 0, with_cc: bool = False):
    """One optimizer step on ``batch``. Returns (StepResult, model)."""
    if optimizer is None:
        optimizer = make_optimizer(cfg.optimizer, cfg.learning_rate)
    result, grads = batch_loss_and_grads(model, batch, cfg.loss, with_cc)
    if not np.isfinite(result.loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
        raise NumericalAbort(iteration)
    optimizer.step(model.params, grads)
    return result, model


def sample_batch(world: IdentityWorld, cfg: TrainConfig, stage: int, rng: np.random.Generator):
    """Stage 1: intra pairs only. Stage 2: an even intra/inter split, or inter
    pairs only when ``stage2_mode == 'inter'``. One tau per kind per batch."""
    K = cfg.instances_per_frame
    tau_a = cfg.schedule.draw_alpha(rng)
    tau_b = cfg.schedule.draw_beta(rng)
    if stage == 1:
        n_intra = cfg.pairs_per_batch
    elif cfg.stage2_mode == "inter":
        n_intra = 0
    else:
        n_intra = cfg.pairs_per_batch // 2
    n_inter = cfg.pairs_per_batch - n_intra if stage == 2 else 0
    batch = []
    if n_intra:
        batch += intra_sample_batch(world, n_intra, K, tau_a, rng, cfg.frame_gap)
    if n_inter:
        batch += inter_sample_batch(world, n_inter, K, tau_b, rng)
    return batch


def train_two_stage(world: IdentityWorld, model: LearnedEmbedder, cfg: TrainConfig):
    """Run the stage-1 then stage-2 schedule. The data stream depends only on
    ``cfg.seed``, never on the model, so runs differing only in loss or model
    see identical batches."""
    rng = stream_rng(cfg.seed, 0)
    opt = make_optimizer(cfg.optimizer, cfg.learning_rate)
    log = TrainLog()
    digest = hashlib.sha256()
    start = time.perf_counter()
    schedule = [1] * cfg.stage1_iters + [2] * cfg.stage2_iters
    for it, stage in enumerate(schedule):
        batch = sample_batch(world, cfg, stage, rng)
        for pair in batch:
            for obs in pair.observations():
                digest.update(np.ascontiguousarray(obs).tobytes())
        with_cc = it % cfg.cc_every == 0
        result, model = train_step(model, batch, cfg, opt, it, with_cc)
        log.append({
            "iter": it,
            "stage": stage,
            "loss_intra": result.loss_intra,
            "loss_inter": result.loss_inter,
            "hard_cc_rate": result.hard_cc_rate,
            "seconds": time.perf_counter() - start,
        })
    log.data_digest = digest.hexdigest()
    return model, log


def save_checkpoint(model: LearnedEmbedder, path, meta: dict | None = None) -> None:
    header = {"format": "cycas-embedder", "version": CHECKPOINT_FORMAT_VERSION, "meta": meta or {}}
    with open(path, "wb") as fh:
        np.savez(
            fh,
            header=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8),
            **{f"param_{k}": v for k, v in model.params.items()},
        )


def load_checkpoint(path) -> tuple[LearnedEmbedder, dict]:
    try:
        with open(path, "rb") as fh:
            data = np.load(io.BytesIO(fh.read()), allow_pickle=False)
            header = json.loads(bytes(data["header"]).decode())
            params = {k[len("param_"):]: data[k] for k in data.files if k.startswith("param_")}
    except Exception as exc:  # OSError, BadZipFile, KeyError, bad JSON, ...
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if header.get("format") != "cycas-embedder" or header.get("version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint header {header}")
    try:
        model = LearnedEmbedder(params)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from exc
    return model, header.get("meta", {})

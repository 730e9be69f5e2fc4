"""Command-line front end: gradcheck, train, sweep, eval.

Configuration is one flat JSON object (see ExperimentConfig); any key can
also be given as a flag, e.g. ``--stage2-iters 0``, and flags win over the
file. Exit codes: 0 success, 1 verification failure, 2 config or input
error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .association import LossConfig, TemperatureConfig
from .eval import (
    ALPHA_GAP_TOLERANCE,
    RetrievalMetrics,
    SweepPoint,
    SweepResult,
    alpha_endpoint_gap,
    detect_trivial_solution,
    evaluate_retrieval,
    monotone_with_tolerance,
    run_sweep_point,
)
from .gradcheck import run_gradcheck
from .simulator import SymmetrySchedule, make_world
from .tensor import DegenerateEmbeddingError
from .trainer import (
    CheckpointError,
    NumericalAbort,
    TrainConfig,
    load_checkpoint,
    make_embedder,
    save_checkpoint,
    train_two_stage,
)

EXIT_OK, EXIT_VERIFY, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3
SWEEP_COLUMNS = ("axis", "tau_mean", "fixed_other", "seed", "rank1", "mAP", "n_queries")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    # world
    N: int = 32
    D_obs: int = 16
    n_cameras: int = 2
    sigma_intra: float = 0.05
    world_seed: int = 0
    identity_dim: typing.Optional[int] = None
    camera_angle: float = 0.5
    bias_scale: float = 1.5
    nuisance_dim: int = 2
    nuisance_gain: float = 30.0
    # embedder; D = None means D_obs
    D: typing.Optional[int] = None
    hidden: typing.Optional[int] = None
    # training
    pairs_per_batch: int = 8
    instances_per_frame: int = 16
    stage1_iters: int = 300
    stage2_iters: int = 1200
    stage2_mode: str = "mixed"
    learning_rate: float = 5e-3
    optimizer: str = "adam"
    frame_gap: int = 1
    cc_every: int = 25
    # loss
    loss_kind: str = "asymmetric"
    margin: float = 0.5
    epsilon: float = 0.1
    delta: float = 0.5
    # symmetry schedule
    tau_alpha_mean: float = 0.9
    tau_beta_mean: float = 0.6
    tau_variance: float = 0.01
    # sweep; sweep_fixed_other = None means 0.6 for alpha and 0.9 for beta
    sweep_axis: str = "alpha"
    sweep_grid: typing.List[float] = field(default_factory=lambda: [0.3, 1.0])
    sweep_fixed_other: typing.Optional[float] = None
    sweep_seeds: int = 5
    # evaluation and verification
    eval_seed: int = 12345
    audit_pairs: int = 20
    gradcheck_trials: int = 100
    # run
    seed: int = 0
    out: str = "runs/default"

    def world(self):
        return make_world(
            N=self.N, D_obs=self.D_obs, n_cameras=self.n_cameras, sigma_intra=self.sigma_intra,
            seed=self.world_seed, identity_dim=self.identity_dim, camera_angle=self.camera_angle,
            bias_scale=self.bias_scale, nuisance_dim=self.nuisance_dim,
            nuisance_gain=self.nuisance_gain,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            pairs_per_batch=self.pairs_per_batch,
            instances_per_frame=self.instances_per_frame,
            stage1_iters=self.stage1_iters,
            stage2_iters=self.stage2_iters,
            stage2_mode=self.stage2_mode,
            learning_rate=self.learning_rate,
            optimizer=self.optimizer,
            loss=LossConfig(self.loss_kind, self.margin, TemperatureConfig(self.epsilon, self.delta)),
            schedule=SymmetrySchedule(self.tau_alpha_mean, self.tau_beta_mean, self.tau_variance),
            frame_gap=self.frame_gap,
            cc_every=self.cc_every,
            seed=self.seed,
        )

    @property
    def embed_dim(self) -> int:
        return self.D_obs if self.D is None else self.D

    @property
    def fixed_other(self) -> float:
        if self.sweep_fixed_other is not None:
            return self.sweep_fixed_other
        return 0.6 if self.sweep_axis == "alpha" else 0.9

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


_FIELDS = typing.get_type_hints(ExperimentConfig)


def _base_type(name: str):
    """(type without Optional, whether None is allowed) for field ``name``."""
    tp = _FIELDS[name]
    if typing.get_origin(tp) is typing.Union and type(None) in typing.get_args(tp):
        return next(a for a in typing.get_args(tp) if a is not type(None)), True
    return tp, False


def _coerce(name: str, value):
    """Check ``value`` against the declared type of field ``name``."""
    tp, optional = _base_type(name)
    if optional and value is None:
        return None
    if typing.get_origin(tp) is list:
        if not isinstance(value, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
        ):
            raise ConfigError(f"{name} must be a list of numbers, got {value!r}")
        return [float(v) for v in value]
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name} must be an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{name} must be a string, got {value!r}")
    return value


def config_from_dict(doc: dict, base: ExperimentConfig | None = None) -> ExperimentConfig:
    unknown = sorted(set(doc) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    values = asdict(base or ExperimentConfig())
    values.update({k: _coerce(k, v) for k, v in doc.items()})
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return config_from_dict(doc)


def _flag_value(name: str, text: str):
    tp, optional = _base_type(name)
    if optional and text.lower() in ("none", "null"):
        return None
    if typing.get_origin(tp) is list:
        try:
            return [float(t) for t in text.split(",") if t.strip()]
        except ValueError as exc:
            raise ConfigError(f"--{name}: expected comma-separated numbers") from exc
    if tp is int:
        try:
            return int(text)
        except ValueError as exc:
            raise ConfigError(f"--{name}: expected an integer, got {text!r}") from exc
    if tp is float:
        try:
            return float(text)
        except ValueError as exc:
            raise ConfigError(f"--{name}: expected a number, got {text!r}") from exc
    return text


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cycas", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"cycas {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("gradcheck", "verify every backward pass against finite differences"),
        ("train", "two-stage training run with final evaluation"),
        ("sweep", "symmetry sweep over a tau grid and several seeds"),
        ("eval", "evaluate a saved checkpoint"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat JSON config file")
        if name == "eval":
            p.add_argument("--checkpoint", required=True, help="model.npz written by train")
        for key in _FIELDS:
            p.add_argument(f"--{key.replace('_', '-')}", dest=f"cfg_{key}", default=argparse.SUPPRESS,
                           metavar=key.upper())
    return parser


def resolve_config(args, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else (base or ExperimentConfig())
    overrides = {k[4:]: _flag_value(k[4:], v) for k, v in vars(args).items() if k.startswith("cfg_")}
    return config_from_dict(overrides, cfg)


def _write(path: Path, text: str) -> None:
    path.write_text(text)


def _metrics_doc(metrics, trivial, extra=None) -> dict:
    doc = {"version": __version__, **metrics.as_dict(), "trivial": trivial.as_dict()}
    doc.update(extra or {})
    return doc


def cmd_gradcheck(cfg: ExperimentConfig) -> int:
    report = run_gradcheck(n_trials=cfg.gradcheck_trials, seed=cfg.seed)
    for line in report.lines():
        print(line)
    print("gradcheck", "passed" if report.passed else "FAILED")
    return EXIT_OK if report.passed else EXIT_VERIFY


def cmd_train(cfg: ExperimentConfig) -> int:
    world = cfg.world()
    tcfg = cfg.train_config()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "config.json", cfg.to_json())
    model = make_embedder(world.D_obs, cfg.embed_dim, hidden=cfg.hidden, seed=cfg.seed)
    model, log = train_two_stage(world, model, tcfg)
    _write(out / "log.csv", log.to_csv())
    _write(out / "timing.csv", log.timing_csv())
    save_checkpoint(model, out / "model.npz", {"version": __version__, "config": asdict(cfg)})
    metrics = evaluate_retrieval(model, world, rng=np.random.default_rng(cfg.eval_seed))
    trivial = detect_trivial_solution(model, world, n_pairs=cfg.audit_pairs, seed=cfg.eval_seed)
    doc = _metrics_doc(metrics, trivial, {"data_digest": log.data_digest})
    _write(out / "metrics.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(json.dumps(doc, sort_keys=True))
    return EXIT_OK


def _read_sweep_rows(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SWEEP_COLUMNS:
            raise ConfigError(f"{path} has unexpected columns {reader.fieldnames}")
        return list(reader)


def cmd_sweep(cfg: ExperimentConfig) -> int:
    if not cfg.sweep_grid:
        raise ConfigError("sweep_grid must be nonempty")
    if cfg.sweep_axis not in ("alpha", "beta"):
        raise ConfigError(f"sweep_axis must be 'alpha' or 'beta', got {cfg.sweep_axis!r}")
    world = cfg.world()
    tcfg = cfg.train_config()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg_path = out / "config.json"
    if cfg_path.exists() and cfg_path.read_text() != cfg.to_json():
        raise ConfigError(f"{out} holds a sweep with a different config; use a fresh --out")
    _write(cfg_path, cfg.to_json())

    rows_path = out / "sweep.csv"
    done = {(float(r["tau_mean"]), int(r["seed"])): r for r in _read_sweep_rows(rows_path)}
    fresh = not rows_path.exists()
    seeds = [cfg.seed + k for k in range(cfg.sweep_seeds)]
    result = SweepResult(cfg.sweep_axis, cfg.fixed_other)
    with open(rows_path, "a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if fresh:
            writer.writerow(SWEEP_COLUMNS)
        for tau in cfg.sweep_grid:
            for s in seeds:
                if (tau, s) in done:
                    r = done[(tau, s)]
                    result.grid.append(SweepPoint(tau, s, RetrievalMetrics(
                        float(r["rank1"]), float(r["mAP"]), int(r["n_queries"]))))
                    continue
                point = run_sweep_point(world, tcfg, cfg.sweep_axis, tau, cfg.fixed_other,
                                        s, cfg.embed_dim, cfg.hidden)
                m = point.metrics
                writer.writerow([cfg.sweep_axis, repr(tau), repr(cfg.fixed_other), s,
                                 repr(m.rank1), repr(m.mAP), m.n_queries])
                fh.flush()
                result.grid.append(point)

    summary = {
        "version": __version__,
        "axis": cfg.sweep_axis,
        "fixed_other": cfg.fixed_other,
        "points": [
            {"tau_mean": t, "mean_rank1": m, "stderr_rank1": se, "n_seeds": len(result.by_tau()[t])}
            for t, (m, se) in sorted(result.summary().items())
        ],
    }
    if cfg.sweep_axis == "alpha" and len(result.summary()) >= 2:
        gap = alpha_endpoint_gap(result)
        summary["criterion"] = {"name": "alpha_endpoint_gap", "value": gap,
                                "threshold": ALPHA_GAP_TOLERANCE, "passed": gap <= ALPHA_GAP_TOLERANCE}
    elif cfg.sweep_axis == "beta" and len(result.summary()) >= 2:
        summary["criterion"] = {"name": "beta_monotone_one_inversion",
                                "passed": monotone_with_tolerance(result)}
    _write(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_eval(cfg: ExperimentConfig, checkpoint: str) -> int:
    model, _ = load_checkpoint(checkpoint)
    world = cfg.world()
    if model.input_dim != world.D_obs:
        raise ConfigError(
            f"checkpoint expects {model.input_dim}-dim observations, world has D_obs={world.D_obs}"
        )
    metrics = evaluate_retrieval(model, world, rng=np.random.default_rng(cfg.eval_seed))
    trivial = detect_trivial_solution(model, world, n_pairs=cfg.audit_pairs, seed=cfg.eval_seed)
    doc = _metrics_doc(metrics, trivial, {"checkpoint": str(checkpoint)})
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "eval_metrics.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(json.dumps(doc, sort_keys=True))
    return EXIT_OK


def _checkpoint_config(path) -> ExperimentConfig | None:
    """Config recorded in a checkpoint, so eval reuses the training world."""
    try:
        _, meta = load_checkpoint(path)
    except CheckpointError:
        return None
    recorded = meta.get("config")
    return config_from_dict(recorded) if isinstance(recorded, dict) else None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        base = _checkpoint_config(args.checkpoint) if args.command == "eval" else None
        cfg = resolve_config(args, base)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg)
        return cmd_eval(cfg, args.checkpoint)
    except (NumericalAbort, DegenerateEmbeddingError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

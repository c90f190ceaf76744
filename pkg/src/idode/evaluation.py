"""Experiment orchestration and metrics.

run_experiment drives the full pipeline: integrate a training grid, apply the
chosen state representation, build the supervised set, train, integrate test
trajectories, infer their parameters, and score per-parameter R^2 / MAE.
Everything is reproducible from the seeds in the config; persisted artifacts
contain no wall-clock values so identical runs write identical bytes.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

import idode.dataset as ds
import idode.infer as inf
import idode.net as nets
import idode.train as tr
from idode.embed import EmbeddingSpec, delay_embed, spaced_delay_state
from idode.integrate import batch_integrate, integrate
from idode.oracle import affine_least_squares
from idode.systems import get_system
from idode._container import atomic_write_bytes

__all__ = [
    "UndefinedRSquaredError",
    "StageError",
    "Representation",
    "ExperimentConfig",
    "EvalReport",
    "r_squared",
    "run_experiment",
    "compare_representations",
    "DEFAULT_INITIAL_STATE",
    "DEFAULT_DT",
]

# canonical initial points and grid spacings used by the reference experiments
DEFAULT_INITIAL_STATE = {
    "lorenz": (0.0, 1.0, 1.05),
    "lorenz96": (-2.46820633, 0.09570264, 1.59270902, 10.21372147),
    "lvpp": (3.0, 3.0),
    "double-pendulum": (-44.334542, 223.53554, -1.2249799, 2.535486),
}

DEFAULT_DT = {
    "lorenz": 0.01,
    "lorenz96": 0.01,
    "lvpp": 0.01,
    "double-pendulum": 1e-4,
}

OUTLIER_BOX_FRACTION = 0.25


class UndefinedRSquaredError(ValueError):
    """R^2 is undefined when the true values carry no variance."""


class StageError(RuntimeError):
    """Pipeline failure tagged with the stage that raised it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


def r_squared(true_vals, predicted) -> float:
    """Coefficient of determination 1 - SS_res / SS_tot."""
    t = np.asarray(true_vals, dtype=float).reshape(-1)
    p = np.asarray(predicted, dtype=float).reshape(-1)
    if t.size == 0 or t.size != p.size:
        raise ValueError("true and predicted must have equal nonzero lengths")
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    if ss_tot == 0.0:
        raise UndefinedRSquaredError("true values are all identical")
    ss_res = float(np.sum((t - p) ** 2))
    return 1.0 - ss_res / ss_tot


@dataclass(frozen=True)
class Representation:
    """How trajectories are presented to the network.

    kind "full_state" passes states through; "full_state_spaced_delay" stacks
    `dim` copies of the full state lagged by delay_steps; "scalar_delay"
    embeds a single channel into `dim` delay coordinates.
    """

    kind: str = "full_state"
    channel: int = 0
    delay_steps: int = 1
    dim: int = 1

    KINDS = ("full_state", "full_state_spaced_delay", "scalar_delay")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"kind must be one of {self.KINDS}")

    def apply(self, traj):
        if self.kind == "full_state":
            return traj
        if self.kind == "full_state_spaced_delay":
            return spaced_delay_state(traj, self.delay_steps, self.dim)
        spec = EmbeddingSpec(
            delay_steps=self.delay_steps, dim=self.dim, channels=(self.channel,)
        )
        return delay_embed(traj, spec)

    def state_width(self, state_dim: int) -> int:
        if self.kind == "full_state":
            return state_dim
        if self.kind == "full_state_spaced_delay":
            return state_dim * self.dim
        return self.dim

    def label(self) -> str:
        if self.kind == "full_state":
            return "full_state"
        if self.kind == "full_state_spaced_delay":
            return f"spaced_delay(tau={self.delay_steps},copies={self.dim})"
        return f"scalar_delay(ch={self.channel},tau={self.delay_steps},dim={self.dim})"

    def to_json_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json_dict(cls, d: dict) -> "Representation":
        return cls(**d)


@dataclass
class ExperimentConfig:
    system: str
    system_kwargs: dict = field(default_factory=dict)
    representation: Representation = field(default_factory=Representation)
    train_step: float = 0.5
    n_test: int = 50
    t_end: float = 100.0
    test_t_end: Optional[float] = None
    dt: Optional[float] = None
    x0: Optional[list] = None
    method: str = "dopri5"
    hidden: list = field(default_factory=lambda: [128, 128, 128])
    activation: str = "relu"
    normalize: bool = True
    train: tr.TrainConfig = field(default_factory=tr.TrainConfig)
    infer: inf.InferConfig = field(default_factory=inf.InferConfig)
    data_seed: int = 0
    net_seed: int = 0
    use_oracle: bool = False
    model_path: Optional[str] = None
    outdir: Optional[str] = None
    jobs: int = 1

    def resolved_dt(self) -> float:
        return self.dt if self.dt is not None else DEFAULT_DT[self.system]

    def resolved_x0(self) -> np.ndarray:
        if self.x0 is not None:
            return np.asarray(self.x0, dtype=float)
        if self.system == "lorenz96":
            dim = self.system_kwargs.get("dim", 4)
            if dim != 4:
                raise ValueError("no default x0 for lorenz96 with dim != 4")
        return np.asarray(DEFAULT_INITIAL_STATE[self.system], dtype=float)

    def to_json_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["representation"] = self.representation.to_json_dict()
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "representation" in d and isinstance(d["representation"], dict):
            d["representation"] = Representation.from_json_dict(d["representation"])
        if "train" in d and isinstance(d["train"], dict):
            d["train"] = tr.TrainConfig(**d["train"])
        if "infer" in d and isinstance(d["infer"], dict):
            cfg = dict(d["infer"])
            if isinstance(cfg.get("init"), list):
                cfg["init"] = tuple(cfg["init"])
            d["infer"] = inf.InferConfig(**cfg)
        return cls(**d)


@dataclass
class EvalReport:
    """Per-parameter scores plus the raw scatter behind them.

    `runtime` is in-memory only; serialized reports omit it so repeated runs
    with the same seeds produce byte-identical files.
    """

    param_names: list
    r2: list
    mae: list
    scatter: np.ndarray  # rows (param_index, true, predicted)
    outliers: list
    n_test: int
    n_failed: int
    runtime: float
    config: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "param_names": list(self.param_names),
            "r2": [float(v) for v in self.r2],
            "mae": [float(v) for v in self.mae],
            "outliers": self.outliers,
            "n_test": self.n_test,
            "n_failed": self.n_failed,
            "config": self.config,
        }


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=2) + "\n").encode("utf-8")


def _scatter_csv_bytes(scatter: np.ndarray) -> bytes:
    lines = ["param_index,true,predicted"]
    for row in scatter:
        lines.append(f"{int(row[0])},{row[1]!r},{row[2]!r}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def _curve_csv_bytes(report: tr.TrainReport) -> bytes:
    lines = ["step,train_loss,holdout_loss"]
    for s, a, b in report.curve_rows():
        lines.append(f"{s},{a!r},{b!r}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def _write_sidecar(path: str, config: dict) -> None:
    cfg_bytes = _json_bytes(config)
    sidecar = {
        "config": config,
        "config_sha256": hashlib.sha256(cfg_bytes).hexdigest(),
    }
    atomic_write_bytes(path + ".meta.json", _json_bytes(sidecar))


def _stage(name: str):
    class _Ctx:
        def __enter__(self):
            return None

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, StageError):
                raise StageError(name, exc) from exc
            return False

    return _Ctx()


def run_experiment(cfg: ExperimentConfig) -> EvalReport:
    """End-to-end pipeline; every stage failure is tagged with its stage name."""
    t_start = time.perf_counter()
    system = get_system(cfg.system, **cfg.system_kwargs)
    dt = cfg.resolved_dt()
    x0 = cfg.resolved_x0()
    rep = cfg.representation
    outdir = cfg.outdir
    if outdir:
        os.makedirs(outdir, exist_ok=True)
    cfg_dict = cfg.to_json_dict()
    cfg_dict.pop("outdir", None)  # disk location is not part of the experiment

    with _stage("grids"):
        grid, test_params = ds.train_test_grids(
            system, cfg.train_step, cfg.n_test, cfg.data_seed
        )
        train_points = grid.points()

    model = None
    train_report = None
    if not cfg.use_oracle:
        if cfg.model_path:
            with _stage("load-model"):
                model = nets.load_model(cfg.model_path)
        else:
            with _stage("generate-train"):
                train_set = batch_integrate(
                    system, grid, x0, cfg.t_end, dt, cfg.method, jobs=cfg.jobs
                )
                if outdir:
                    ds.save_trajectories(train_set, os.path.join(outdir, "train.set"))
            with _stage("represent-train"):
                if rep.kind != "full_state":
                    train_set = train_set.map(rep.apply)
            with _stage("supervised"):
                data = ds.build_supervised(train_set, normalize=cfg.normalize)
            with _stage("train"):
                width = rep.state_width(system.state_dim)
                dims = [width + system.param_dim, *cfg.hidden, width]
                model = nets.init_model(
                    dims,
                    activation=cfg.activation,
                    seed=cfg.net_seed,
                    input_split=width,
                )
                model, train_report = tr.train(model, data, cfg.train)
                if outdir:
                    nets.save_model(model, os.path.join(outdir, "model.bin"))
                    atomic_write_bytes(
                        os.path.join(outdir, "loss_curve.csv"),
                        _curve_csv_bytes(train_report),
                    )
    elif rep.kind != "full_state":
        raise StageError("config", ValueError("oracle-backed runs need full_state"))

    with _stage("generate-test"):
        test_t_end = cfg.test_t_end if cfg.test_t_end is not None else cfg.t_end
        test_set = batch_integrate(
            system, test_params, x0, test_t_end, dt, cfg.method, jobs=cfg.jobs
        )
        if test_set.failures:
            failed_idx = {i for i, _ in test_set.failures}
            test_params = np.array(
                [p for i, p in enumerate(test_params) if i not in failed_idx]
            )
        if outdir:
            ds.save_trajectories(test_set, os.path.join(outdir, "test.set"))

    with _stage("represent-test"):
        test_trajs = [
            rep.apply(t) if rep.kind != "full_state" else t for t in test_set
        ]

    with _stage("infer"):
        n_failed = len(test_set.failures)
        if cfg.use_oracle:
            estimates = []
            for traj in test_trajs:
                alpha_hat, _ = affine_least_squares(system, traj)
                estimates.append(alpha_hat)
            ok = [True] * len(estimates)
        else:
            width = test_trajs[0].states.shape[1] if test_trajs else 0
            if test_trajs and width + model.param_dim != model.input_dim:
                raise ValueError(
                    f"representation width {width} + {model.param_dim} params "
                    f"!= model input width {model.input_dim}"
                )
            results = inf.infer_batch(
                model,
                test_trajs,
                cfg.infer,
                param_box=system.param_box,
                train_params=train_points,
            )
            estimates = [r.alpha_hat for r in results]
            ok = [r.error is None and np.all(np.isfinite(r.alpha_hat)) for r in results]
            n_failed += sum(1 for o in ok if not o)

    with _stage("metrics"):
        rows = []
        for i, (alpha_true, alpha_hat) in enumerate(zip(test_params, estimates)):
            if not ok[i]:
                continue
            for j in range(system.param_dim):
                rows.append((j, float(alpha_true[j]), float(alpha_hat[j])))
        scatter = np.array(rows, dtype=float).reshape(len(rows), 3)
        r2 = []
        mae = []
        outliers = []
        for j, (lo, hi) in enumerate(system.param_box):
            mask = scatter[:, 0] == j
            truth = scatter[mask, 1]
            pred = scatter[mask, 2]
            r2.append(r_squared(truth, pred))
            mae.append(float(np.mean(np.abs(truth - pred))))
            limit = OUTLIER_BOX_FRACTION * (hi - lo)
            for t_val, p_val in zip(truth, pred):
                if abs(p_val - t_val) > limit:
                    outliers.append(
                        {"param": j, "true": t_val, "predicted": p_val}
                    )

    report = EvalReport(
        param_names=list(system.param_names),
        r2=r2,
        mae=mae,
        scatter=scatter,
        outliers=outliers,
        n_test=cfg.n_test,
        n_failed=n_failed,
        runtime=time.perf_counter() - t_start,
        config=cfg_dict,
    )

    if outdir:
        with _stage("persist"):
            atomic_write_bytes(
                os.path.join(outdir, "report.json"), _json_bytes(report.to_json_dict())
            )
            atomic_write_bytes(
                os.path.join(outdir, "scatter.csv"), _scatter_csv_bytes(scatter)
            )
            _write_sidecar(os.path.join(outdir, "report.json"), cfg_dict)
    return report


def compare_representations(cfgs: list[ExperimentConfig]) -> list[dict]:
    """Run configs differing only in representation; one R^2 row per config."""
    if not cfgs:
        raise ValueError("need at least one config")
    baseline = None
    for cfg in cfgs:
        d = cfg.to_json_dict()
        d.pop("representation")
        d.pop("outdir")
        if baseline is None:
            baseline = d
        elif d != baseline:
            raise ValueError("configs must differ only in representation (and outdir)")
    rows = []
    for cfg in cfgs:
        report = run_experiment(cfg)
        rows.append(
            {
                "representation": cfg.representation.label(),
                "r2": report.r2,
                "mae": report.mae,
                "param_names": report.param_names,
            }
        )
    return rows

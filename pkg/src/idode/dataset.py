"""Supervised-set assembly, parameter grids, and trajectory persistence.

Supervised pairs map (state-or-embedded-state, alpha) to the forward
finite-difference velocity (x(t_{k+1}) - x(t_k)) / dt, pooled over all
trajectories of a set. Normalization (z-score per column) is applied after
target construction and its statistics are stored so models can undo it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from idode._container import FormatError, read_container, write_container
from idode.embed import EmbeddedTrajectory, EmbeddingSpec
from idode.integrate import Trajectory
from idode.systems import SystemSpec

__all__ = [
    "ParamGrid",
    "TrajectorySet",
    "Normalization",
    "SupervisedSet",
    "FormatError",
    "build_supervised",
    "train_test_grids",
    "save_trajectories",
    "load_trajectories",
]

SET_MAGIC = b"IDODESET"
SET_VERSION = 1

AnyTrajectory = Union[Trajectory, EmbeddedTrajectory]


@dataclass(frozen=True)
class ParamGrid:
    """Cartesian lattice of parameter values with an optional exclusion mask.

    Each axis is (lo, hi, step) or an explicit list of values. The exclusion
    mask is a predicate over integer lattice coordinates; "checkerboard"
    drops points whose coordinates sum to an odd number.
    """

    axes: tuple
    exclusion: Union[str, Callable[[tuple[int, ...]], bool], None] = None

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(tuple(ax) for ax in self.axes))
        if isinstance(self.exclusion, str) and self.exclusion not in ("none", "checkerboard"):
            raise ValueError(f"unknown exclusion '{self.exclusion}'")

    def _axis_values(self, ax) -> np.ndarray:
        if len(ax) == 3 and all(np.isscalar(v) for v in ax):
            lo, hi, step = ax
            if step <= 0 or step > hi - lo:
                raise ValueError(f"axis step {step} invalid for range [{lo}, {hi}]")
            count = int(round((hi - lo) / step)) + 1
            return np.linspace(lo, hi, count)  # endpoints exact, stays in the box
        return np.unique(np.asarray(ax, dtype=float))

    def points(self) -> np.ndarray:
        """All lattice points (deduplicated, exclusions applied), shape (P, m)."""
        values = [self._axis_values(ax) for ax in self.axes]
        idx_mesh = np.meshgrid(*[np.arange(v.size) for v in values], indexing="ij")
        coords = np.stack([m.ravel() for m in idx_mesh], axis=1)
        if self.exclusion in (None, "none"):
            mask = np.ones(len(coords), dtype=bool)
        elif self.exclusion == "checkerboard":
            mask = coords.sum(axis=1) % 2 == 0
        else:
            mask = np.array([not self.exclusion(tuple(c)) for c in coords])
        val_mesh = np.meshgrid(*values, indexing="ij")
        pts = np.stack([m.ravel() for m in val_mesh], axis=1)
        return pts[mask]

    def __len__(self) -> int:
        return self.points().shape[0]

    @classmethod
    def from_json_dict(cls, d: dict) -> "ParamGrid":
        axes = tuple((ax["lo"], ax["hi"], ax["step"]) for ax in d["axes"])
        return cls(axes=axes, exclusion=d.get("exclusion", "none"))


@dataclass
class TrajectorySet:
    """Homogeneous collection of (possibly embedded) trajectories."""

    trajectories: list
    system_name: str
    dt: float
    embedding: Optional[EmbeddingSpec] = None
    failures: list = field(default_factory=list)

    def __post_init__(self):
        widths = {t.states.shape[1] for t in self.trajectories}
        if len(widths) > 1:
            raise ValueError(f"inhomogeneous state widths in set: {sorted(widths)}")
        pdims = {t.params.size for t in self.trajectories}
        if len(pdims) > 1:
            raise ValueError("inhomogeneous parameter dimensions in set")

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def map(self, fn: Callable[[AnyTrajectory], AnyTrajectory]) -> "TrajectorySet":
        mapped = [fn(t) for t in self.trajectories]
        emb = mapped[0].spec if mapped and isinstance(mapped[0], EmbeddedTrajectory) else None
        return TrajectorySet(
            trajectories=mapped,
            system_name=self.system_name,
            dt=self.dt,
            embedding=emb,
            failures=list(self.failures),
        )


@dataclass(frozen=True)
class Normalization:
    """Per-column affine transforms for inputs and targets: v -> (v - shift) / scale."""

    input_shift: np.ndarray
    input_scale: np.ndarray
    target_shift: np.ndarray
    target_scale: np.ndarray

    def __post_init__(self):
        for name in ("input_shift", "input_scale", "target_shift", "target_scale"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(self.input_scale <= 0) or np.any(self.target_scale <= 0):
            raise ValueError("normalization scales must be positive")

    @classmethod
    def identity(cls, input_dim: int, target_dim: int) -> "Normalization":
        return cls(
            input_shift=np.zeros(input_dim),
            input_scale=np.ones(input_dim),
            target_shift=np.zeros(target_dim),
            target_scale=np.ones(target_dim),
        )

    def normalize_inputs(self, x: np.ndarray) -> np.ndarray:
        return (x - self.input_shift) / self.input_scale

    def normalize_targets(self, y: np.ndarray) -> np.ndarray:
        return (y - self.target_shift) / self.target_scale

    def denormalize_inputs(self, x: np.ndarray) -> np.ndarray:
        return x * self.input_scale + self.input_shift

    def denormalize_targets(self, y: np.ndarray) -> np.ndarray:
        return y * self.target_scale + self.target_shift

    def to_json_dict(self) -> dict:
        return {
            "input_shift": self.input_shift.tolist(),
            "input_scale": self.input_scale.tolist(),
            "target_shift": self.target_shift.tolist(),
            "target_scale": self.target_scale.tolist(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Normalization":
        return cls(
            input_shift=d["input_shift"],
            input_scale=d["input_scale"],
            target_shift=d["target_shift"],
            target_scale=d["target_scale"],
        )


@dataclass(frozen=True)
class SupervisedSet:
    """Pooled (input, finite-difference velocity) pairs, optionally z-scored.

    `inputs`/`targets` are stored as consumed by training (normalized when
    `normalized` is set); `normalization` undoes the transform.
    """

    inputs: np.ndarray
    targets: np.ndarray
    normalization: Normalization
    dt: float
    normalized: bool
    param_dim: int

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def target_dim(self) -> int:
        return self.targets.shape[1]

    @property
    def state_dim(self) -> int:
        return self.input_dim - self.param_dim

    def raw_inputs(self) -> np.ndarray:
        return self.normalization.denormalize_inputs(self.inputs) if self.normalized else self.inputs

    def raw_targets(self) -> np.ndarray:
        return self.normalization.denormalize_targets(self.targets) if self.normalized else self.targets


def build_supervised(tset: TrajectorySet, normalize: bool = True) -> SupervisedSet:
    """Pool forward-difference pairs from every trajectory of the set."""
    if len(tset) == 0:
        raise ValueError("trajectory set is empty")
    inputs = []
    targets = []
    for traj in tset:
        if len(traj) < 2:
            raise ValueError("every trajectory needs at least 2 points")
        states = traj.states
        diffs = (states[1:] - states[:-1]) / tset.dt
        alphas = np.broadcast_to(traj.params, (diffs.shape[0], traj.params.size))
        inputs.append(np.concatenate([states[:-1], alphas], axis=1))
        targets.append(diffs)
    x = np.concatenate(inputs, axis=0)
    y = np.concatenate(targets, axis=0)
    param_dim = tset.trajectories[0].params.size
    if normalize:
        in_shift = x.mean(axis=0)
        in_scale = x.std(axis=0)
        in_scale[in_scale == 0] = 1.0
        t_shift = y.mean(axis=0)
        t_scale = y.std(axis=0)
        t_scale[t_scale == 0] = 1.0
        norm = Normalization(in_shift, in_scale, t_shift, t_scale)
        x = norm.normalize_inputs(x)
        y = norm.normalize_targets(y)
    else:
        norm = Normalization.identity(x.shape[1], y.shape[1])
    return SupervisedSet(
        inputs=x,
        targets=y,
        normalization=norm,
        dt=tset.dt,
        normalized=normalize,
        param_dim=param_dim,
    )


def train_test_grids(
    system: SystemSpec, train_step: float, n_test: int, seed: int
) -> tuple[ParamGrid, np.ndarray]:
    """Training lattice at `train_step` plus n_test uniform samples in the box."""
    if n_test < 1:
        raise ValueError("n_test must be >= 1")
    for lo, hi in system.param_box:
        if train_step > hi - lo:
            raise ValueError(f"train_step {train_step} exceeds range [{lo}, {hi}]")
        ratio = (hi - lo) / train_step
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ValueError(
                f"train_step {train_step} does not divide range [{lo}, {hi}]"
            )
    grid = ParamGrid(axes=tuple((lo, hi, train_step) for lo, hi in system.param_box))
    rng = np.random.default_rng(seed)
    lo = np.array([b[0] for b in system.param_box])
    hi = np.array([b[1] for b in system.param_box])
    test = lo + (hi - lo) * rng.random((n_test, system.param_dim))
    return grid, test


def save_trajectories(tset: TrajectorySet, path) -> None:
    """Serialize a trajectory set to the IDODESET container."""
    meta = []
    chunks = []
    for traj in tset:
        meta.append(
            {
                "rows": int(len(traj)),
                "t0": float(traj.times[0]) if len(traj) else 0.0,
                "params": np.asarray(traj.params, dtype=float).tolist(),
            }
        )
        chunks.append(np.ascontiguousarray(traj.times, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(traj.states, dtype="<f8").tobytes())
    width = tset.trajectories[0].states.shape[1] if len(tset) else 0
    header = {
        "system": tset.system_name,
        "dt": tset.dt,
        "state_dim": width,
        "embedding": tset.embedding.to_json_dict() if tset.embedding else None,
        "trajectories": meta,
    }
    write_container(path, SET_MAGIC, SET_VERSION, header, b"".join(chunks))


def load_trajectories(path) -> TrajectorySet:
    """Load an IDODESET container; inverse of save_trajectories, bit-exact."""
    header, payload = read_container(path, SET_MAGIC, SET_VERSION)
    dt = float(header["dt"])
    width = int(header["state_dim"])
    emb = header.get("embedding")
    spec = EmbeddingSpec.from_json_dict(emb) if emb else None
    expected = sum(m["rows"] * (1 + width) * 8 for m in header["trajectories"])
    if len(payload) != expected:
        raise FormatError(f"{path}: payload size {len(payload)} != expected {expected}")
    trajectories = []
    offset = 0
    for m in header["trajectories"]:
        rows = int(m["rows"])
        times = np.frombuffer(payload, dtype="<f8", count=rows, offset=offset).copy()
        offset += rows * 8
        states = (
            np.frombuffer(payload, dtype="<f8", count=rows * width, offset=offset)
            .reshape(rows, width)
            .copy()
        )
        offset += rows * width * 8
        params = np.asarray(m["params"], dtype=float)
        if spec is None:
            traj = Trajectory(
                times=times, states=states, params=params, dt=dt, system_name=header["system"]
            )
        else:
            traj = EmbeddedTrajectory(
                times=times,
                states=states,
                spec=spec,
                params=params,
                dt=dt,
                system_name=header["system"],
            )
        trajectories.append(traj)
    return TrajectorySet(
        trajectories=trajectories, system_name=header["system"], dt=dt, embedding=spec
    )

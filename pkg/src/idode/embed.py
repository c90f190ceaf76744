"""Delay-coordinate embedding and minimum-embedding-dimension estimation.

Embedding convention: block 0 of an embedded row is the current sample, block
j the sample lagged by j*tau steps, so row k of the output is

    (u(t_k), u(t_k - tau), ..., u(t_k - (d-1)*tau))

stamped with the time of the current sample. Dimension estimators follow Cao
(ratio of mean neighbor-distance growth) and Kennel (false nearest neighbor
fraction); both exclude temporal neighbors within a Theiler window of tau.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from idode.integrate import Trajectory

__all__ = [
    "EmbeddingSpec",
    "EmbeddedTrajectory",
    "EmbeddingDimResult",
    "InsufficientLengthError",
    "DegenerateSeriesError",
    "delay_embed",
    "embed_series",
    "min_embedding_dim_cao",
    "min_embedding_dim_fnn",
    "select_delay_autocorr",
    "spaced_delay_state",
]


class InsufficientLengthError(ValueError):
    """Series too short for the requested embedding."""


class DegenerateSeriesError(ValueError):
    """Series carries no usable variation (constant or zero variance)."""


@dataclass(frozen=True)
class EmbeddingSpec:
    """Delay-coordinate map: `dim` copies of `channels`, lagged by `delay_steps`."""

    delay_steps: int
    dim: int
    channels: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.delay_steps < 1:
            raise ValueError("delay_steps must be >= 1")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if len(self.channels) < 1:
            raise ValueError("channels must be non-empty")

    @property
    def embedded_dim(self) -> int:
        return self.dim * len(self.channels)

    def to_json_dict(self) -> dict:
        return {
            "delay_steps": self.delay_steps,
            "dim": self.dim,
            "channels": list(self.channels),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "EmbeddingSpec":
        return cls(
            delay_steps=int(d["delay_steps"]),
            dim=int(d["dim"]),
            channels=tuple(d["channels"]),
        )


@dataclass(frozen=True)
class EmbeddedTrajectory:
    """Delay-embedded trajectory; times are those of the current (block 0) sample."""

    times: np.ndarray
    states: np.ndarray
    spec: EmbeddingSpec
    params: np.ndarray
    dt: float
    system_name: str

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "states", np.asarray(self.states, dtype=float))
        object.__setattr__(self, "params", np.asarray(self.params, dtype=float))
        if self.states.shape[0] != self.times.shape[0]:
            raise ValueError("states row count must equal times count")
        if self.states.shape[1] != self.spec.embedded_dim:
            raise ValueError("states width must equal spec.embedded_dim")

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]


def _embed_array(source: np.ndarray, tau: int, dim: int) -> np.ndarray:
    """Stack lagged copies of source rows: output row k = source[k0+k-j*tau] blocks."""
    n = source.shape[0]
    offset = (dim - 1) * tau
    rows = n - offset
    if rows < 1:
        raise InsufficientLengthError(
            f"series of length {n} too short for dim={dim}, tau={tau} "
            f"(needs > {offset} samples)"
        )
    blocks = [source[offset - j * tau : n - j * tau] for j in range(dim)]
    return np.concatenate(blocks, axis=1)


def delay_embed(traj: Trajectory, spec: EmbeddingSpec) -> EmbeddedTrajectory:
    """Delay-embed selected channels of a trajectory."""
    width = traj.states.shape[1]
    for c in spec.channels:
        if not 0 <= c < width:
            raise ValueError(f"channel {c} out of range for state width {width}")
    source = traj.states[:, list(spec.channels)]
    states = _embed_array(source, spec.delay_steps, spec.dim)
    offset = (spec.dim - 1) * spec.delay_steps
    return EmbeddedTrajectory(
        times=traj.times[offset:],
        states=states,
        spec=spec,
        params=traj.params,
        dt=traj.dt,
        system_name=traj.system_name,
    )


def spaced_delay_state(traj: Trajectory, tau: int, copies: int) -> EmbeddedTrajectory:
    """Delay-embed the full state: `copies` blocks spaced tau steps apart."""
    spec = EmbeddingSpec(
        delay_steps=tau, dim=copies, channels=tuple(range(traj.states.shape[1]))
    )
    return delay_embed(traj, spec)


def embed_series(series: np.ndarray, tau: int, dim: int) -> np.ndarray:
    """Delay-embed a scalar series into an (N - (dim-1)*tau, dim) matrix."""
    series = np.asarray(series, dtype=float).reshape(-1, 1)
    return _embed_array(series, tau, dim)


class EmbeddingDimResult(NamedTuple):
    dim: int
    saturated: bool
    curve: np.ndarray  # per-d diagnostic: Cao's E1(d) or Kennel's FNN fraction


def _check_series(series: np.ndarray) -> np.ndarray:
    series = np.asarray(series, dtype=float).reshape(-1)
    if np.std(series) == 0.0:
        raise DegenerateSeriesError("series has zero variance")
    return series


def _neighbors(points: np.ndarray, theiler: int, metric: float) -> np.ndarray:
    """Index of each point's nearest neighbor at positive distance outside the
    Theiler window; -1 where none exists."""
    n = points.shape[0]
    tree = cKDTree(points)
    k = min(n, 2 * theiler + 4)
    result = np.full(n, -1, dtype=np.intp)
    pending = np.arange(n)
    while pending.size:
        dists, idxs = tree.query(points[pending], k=k, p=metric)
        if k == 1:
            dists = dists[:, None]
            idxs = idxs[:, None]
        ok = (np.abs(idxs - pending[:, None]) > theiler) & (dists > 0)
        first = np.argmax(ok, axis=1)
        hit = ok[np.arange(pending.size), first]
        result[pending[hit]] = idxs[np.arange(pending.size)[hit], first[hit]]
        if k >= n:
            break
        pending = pending[~hit]
        k = min(n, k * 2)
    return result


def min_embedding_dim_cao(
    series: np.ndarray, tau: int, d_max: int, threshold: float = 0.05
) -> EmbeddingDimResult:
    """Cao's E1 criterion under the Chebyshev metric.

    Returns the smallest d with |E1(d) - 1| < threshold holding at d and d+1,
    or (d_max, saturated=True) when the curve never settles.
    """
    series = _check_series(series)
    if d_max < 2:
        raise ValueError("d_max must be >= 2")
    if series.size < (d_max + 1) * tau + 2:
        raise InsufficientLengthError(
            f"need at least {(d_max + 1) * tau + 2} samples, got {series.size}"
        )
    # E(d) for d = 1..d_max+1, so embeddings up to d_max+2 are required
    e_vals = np.empty(d_max + 1)
    for d in range(1, d_max + 2):
        y_d = embed_series(series, tau, d)
        y_d1 = embed_series(series, tau, d + 1)
        # align on common rows: y_{d+1} is shorter by tau leading samples
        y_d = y_d[tau:]
        nn = _neighbors(y_d, theiler=tau, metric=np.inf)
        valid = nn >= 0
        if not np.any(valid):
            raise InsufficientLengthError(
                f"no usable neighbor pairs at dim {d}; series too short for tau={tau}"
            )
        num = np.max(np.abs(y_d1[valid] - y_d1[nn[valid]]), axis=1)
        den = np.max(np.abs(y_d[valid] - y_d[nn[valid]]), axis=1)
        e_vals[d - 1] = float(np.mean(num / den))
    e1 = e_vals[1:] / e_vals[:-1]  # E1(d) for d = 1..d_max
    for d in range(1, d_max):
        if abs(e1[d - 1] - 1.0) < threshold and abs(e1[d] - 1.0) < threshold:
            return EmbeddingDimResult(dim=d, saturated=False, curve=e1)
    return EmbeddingDimResult(dim=d_max, saturated=True, curve=e1)


def min_embedding_dim_fnn(
    series: np.ndarray,
    tau: int,
    d_max: int,
    rtol: float = 15.0,
    atol: float = 2.0,
) -> EmbeddingDimResult:
    """Kennel's false-nearest-neighbor test under the Euclidean metric.

    A neighbor pair is false when the extra coordinate either inflates the
    distance by more than `rtol` or pushes it past `atol` attractor sizes.
    Returns the smallest d with a false fraction below 1%.
    """
    series = _check_series(series)
    if d_max < 2:
        raise ValueError("d_max must be >= 2")
    if series.size < (d_max + 1) * tau + 2:
        raise InsufficientLengthError(
            f"need at least {(d_max + 1) * tau + 2} samples, got {series.size}"
        )
    sigma = float(np.std(series))
    fractions = np.empty(d_max)
    for d in range(1, d_max + 1):
        y_d = embed_series(series, tau, d)[tau:]
        nn = _neighbors(y_d, theiler=tau, metric=2)
        valid = np.nonzero(nn >= 0)[0]
        if valid.size == 0:
            raise InsufficientLengthError(
                f"no usable neighbor pairs at dim {d}; series too short for tau={tau}"
            )
        i_idx = valid
        j_idx = nn[valid]
        dist = np.sqrt(np.sum((y_d[i_idx] - y_d[j_idx]) ** 2, axis=1))
        # extending d -> d+1 adds the sample lagged d*tau; trimmed row r has
        # current-sample index r + d*tau, so the new coordinate is series[r]
        new_diff = np.abs(series[i_idx] - series[j_idx])
        ratio_false = new_diff / dist > rtol
        dist_d1 = np.sqrt(dist**2 + new_diff**2)
        size_false = dist_d1 / sigma > atol
        fractions[d - 1] = float(np.mean(ratio_false | size_false))
    for d in range(1, d_max + 1):
        if fractions[d - 1] < 0.01:
            return EmbeddingDimResult(dim=d, saturated=False, curve=fractions)
    return EmbeddingDimResult(dim=d_max, saturated=True, curve=fractions)


def select_delay_autocorr(series: np.ndarray, max_lag: int) -> int:
    """First lag where the autocorrelation drops below 1 - 1/e of lag 0.

    Falls back to the first local minimum of the autocorrelation when no
    crossing occurs within max_lag.
    """
    series = _check_series(series)
    if not max_lag < series.size / 2:
        raise ValueError("max_lag must be below half the series length")
    centered = series - np.mean(series)
    denom = float(np.dot(centered, centered))
    acf = np.empty(max_lag + 1)
    acf[0] = 1.0
    for k in range(1, max_lag + 1):
        acf[k] = float(np.dot(centered[:-k], centered[k:])) / denom
    threshold = 1.0 - 1.0 / np.e
    below = np.nonzero(acf < threshold)[0]
    if below.size:
        return int(below[0])
    interior = np.nonzero((acf[1:-1] < acf[:-2]) & (acf[1:-1] <= acf[2:]))[0]
    if interior.size:
        return int(interior[0] + 1)
    return max_lag

"""ODE integration onto uniform output grids.

Default method is adaptive Dormand-Prince 5(4) with dense output; fixed-step
RK4 is kept as a cross-check. Catalog systems run on the compiled core when
it is available, anything else on the pure-python kernels.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from idode import _pykernels, backend
from idode._pykernels import BlowUpError
from idode.systems import SystemSpec

__all__ = ["Trajectory", "BlowUpError", "integrate", "batch_integrate"]

METHODS = ("rk4", "dopri5")


@dataclass(frozen=True)
class Trajectory:
    """States sampled on the uniform grid t_k = t0 + k*dt."""

    times: np.ndarray
    states: np.ndarray
    params: np.ndarray
    dt: float
    system_name: str

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "params", np.asarray(self.params, dtype=float))
        if states.ndim != 2 or times.ndim != 1:
            raise ValueError("states must be (N, n), times (N,)")
        if states.shape[0] != times.shape[0]:
            raise ValueError("states row count must equal times count")
        if times.size >= 2:
            gaps = np.diff(times)
            if np.any(gaps <= 0):
                raise ValueError("times must be strictly increasing")
            if np.max(np.abs(gaps - self.dt)) > 1e-12 * max(1.0, abs(self.dt)):
                raise ValueError("times must be uniformly spaced by dt")
        if not np.all(np.isfinite(states)):
            raise ValueError("states contain non-finite entries")

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]


def _grid_size(t_end: float, dt: float) -> int:
    # tolerate t_end/dt landing a hair under an integer
    return int(np.floor(t_end / dt + 1e-9)) + 1


def integrate(
    spec: SystemSpec,
    alpha,
    x0,
    t_end: float,
    dt: float,
    method: str = "dopri5",
    rtol: float = 1e-9,
    atol: float = 1e-9,
    substeps: int = 1,
    backend_mode: str | None = None,
) -> Trajectory:
    """Integrate dx/dt = F(x, alpha) from x0 and sample every dt up to t_end."""
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got '{method}'")
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if t_end < dt:
        raise ValueError(f"t_end must be at least dt, got t_end={t_end} dt={dt}")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    alpha = np.asarray(alpha, dtype=float).reshape(-1)
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if alpha.size != spec.param_dim:
        raise ValueError(f"expected {spec.param_dim} parameters, got {alpha.size}")
    if x0.size != spec.state_dim:
        raise ValueError(f"expected state of dim {spec.state_dim}, got {x0.size}")
    if not np.all(np.isfinite(x0)) or not np.all(np.isfinite(alpha)):
        raise ValueError("x0 and alpha must be finite")

    n_out = _grid_size(t_end, dt)
    which = backend.resolve(spec.kernel, backend_mode)
    if which == "native":
        native = backend.native_module()
        if method == "rk4":
            states = native.rk4_path(spec.kernel, alpha, x0, dt, n_out, substeps)
        else:
            states = native.dopri5_path(spec.kernel, alpha, x0, dt, n_out, rtol, atol)
    else:
        f = lambda x: spec.velocity(x, alpha)  # noqa: E731
        if method == "rk4":
            states = _pykernels.rk4_path(f, x0, dt, n_out, substeps)
        else:
            states = _pykernels.dopri5_path(f, x0, dt, n_out, rtol, atol)
    times = np.arange(n_out) * dt
    return Trajectory(times=times, states=states, params=alpha, dt=dt, system_name=spec.name)


def batch_integrate(
    spec: SystemSpec,
    grid,
    x0,
    t_end: float,
    dt: float,
    method: str = "dopri5",
    rtol: float = 1e-9,
    atol: float = 1e-9,
    jobs: int = 1,
):
    """Integrate one trajectory per grid point; blow-ups are recorded, not fatal.

    Returns a TrajectorySet whose trajectories follow grid order; failed points
    are listed in ``failures`` as (grid_index, message).
    """
    from idode.dataset import TrajectorySet  # circular at module level

    if hasattr(grid, "points"):
        points = grid.points()
    else:
        points = np.atleast_2d(np.asarray(grid, dtype=float))
    if points.size == 0:
        raise ValueError("parameter grid is empty")

    def run(item):
        idx, alpha = item
        try:
            return idx, integrate(spec, alpha, x0, t_end, dt, method, rtol, atol), None
        except BlowUpError as exc:
            return idx, None, str(exc)

    items = list(enumerate(points))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, items))
    else:
        results = [run(item) for item in items]

    trajectories = [traj for _, traj, msg in results if msg is None]
    failures = [(idx, msg) for idx, _, msg in results if msg is not None]
    return TrajectorySet(
        trajectories=trajectories,
        system_name=spec.name,
        dt=dt,
        embedding=None,
        failures=failures,
    )

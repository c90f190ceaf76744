"""Closed-form least-squares parameter recovery for affine-in-parameter systems.

For F(x, alpha) = L(x) @ alpha + b(x), the velocity-matching problem over a
trajectory is an ordinary least squares in alpha: accumulate the normal
equations gram = E[L^T L] and moment = E[L^T y] with y the finite-difference
velocity minus b, then solve. Serves both as a baseline method and as the
verification oracle for the neural pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from idode.integrate import Trajectory, integrate
from idode.systems import SystemSpec

__all__ = [
    "NormalEquations",
    "NonIdentifiableError",
    "affine_least_squares",
    "dt_convergence_sweep",
    "perturbed_velocity_sweep",
]

CONDITION_LIMIT = 1e12  # beyond this the gram is treated as singular
CHOLESKY_LIMIT = 1e10  # beyond this fall back to an SVD solve


class NonIdentifiableError(RuntimeError):
    """Gram matrix too ill-conditioned: the trajectory pins no unique alpha."""

    def __init__(self, condition: float):
        super().__init__(
            f"normal equations are non-identifiable (condition {condition:.3e} "
            f"> {CONDITION_LIMIT:g})"
        )
        self.condition = condition


@dataclass(frozen=True)
class NormalEquations:
    gram: np.ndarray  # E[L^T L], m x m
    moment: np.ndarray  # E[L^T y], m
    condition: float


def _kahan_add(total, comp, term):
    t = term - comp
    s = total + t
    comp = (s - total) - t
    return s, comp


def _normal_equations(L: np.ndarray, y: np.ndarray, chunk: int = 65536):
    """Mean of L_k^T L_k and L_k^T y_k with compensated chunk accumulation."""
    n_samples, _, m = L.shape
    gram = np.zeros((m, m))
    gram_c = np.zeros((m, m))
    mom = np.zeros(m)
    mom_c = np.zeros(m)
    for s in range(0, n_samples, chunk):
        Lc = L[s : s + chunk]
        yc = y[s : s + chunk]
        gram, gram_c = _kahan_add(gram, gram_c, np.einsum("bnm,bnk->mk", Lc, Lc))
        mom, mom_c = _kahan_add(mom, mom_c, np.einsum("bnm,bn->m", Lc, yc))
    return gram / n_samples, mom / n_samples


def _solve(gram: np.ndarray, moment: np.ndarray) -> tuple[np.ndarray, float]:
    condition = float(np.linalg.cond(gram))
    if not np.isfinite(condition) or condition > CONDITION_LIMIT:
        raise NonIdentifiableError(condition if np.isfinite(condition) else np.inf)
    if condition > CHOLESKY_LIMIT:
        alpha, *_ = np.linalg.lstsq(gram, moment, rcond=None)
        return alpha, condition
    c, low = scipy.linalg.cho_factor(gram)
    return scipy.linalg.cho_solve((c, low), moment), condition


def affine_least_squares(
    spec: SystemSpec,
    traj: Trajectory,
    velocity_targets: np.ndarray | None = None,
) -> tuple[np.ndarray, NormalEquations]:
    """Recover alpha from one trajectory of an affine system.

    Targets default to forward differences of the states; pass
    `velocity_targets` (one row per retained sample, i.e. len(traj) - 1)
    to fit exact or externally perturbed velocities instead.
    """
    if not spec.is_affine:
        raise ValueError(f"system '{spec.name}' has no affine decomposition")
    if len(traj) < 2:
        raise ValueError("trajectory must have at least 2 points")
    states = traj.states[:-1]
    if velocity_targets is None:
        targets = (traj.states[1:] - traj.states[:-1]) / traj.dt
    else:
        targets = np.asarray(velocity_targets, dtype=float)
        if targets.shape != states.shape:
            raise ValueError(
                f"velocity_targets must have shape {states.shape}, got {targets.shape}"
            )
    L, b = spec.affine_decomposition(states)
    y = targets - b
    gram, moment = _normal_equations(L, y)
    alpha, condition = _solve(gram, moment)
    return alpha, NormalEquations(gram=gram, moment=moment, condition=condition)


def dt_convergence_sweep(
    spec: SystemSpec,
    alpha0,
    x0,
    t_end: float,
    dts,
    exact_targets: bool = False,
    rtol: float = 1e-12,
    atol: float = 1e-12,
) -> list[tuple[float, float]]:
    """Recovery error ||alpha_hat - alpha0||_2 per grid spacing dt.

    Each dt gets a fresh tightly-tolerated integration sampled on its own
    grid, so the curve isolates the finite-difference bias (first order in
    dt for smooth fields).
    """
    dts = [float(d) for d in dts]
    if any(d <= 0 for d in dts):
        raise ValueError("dts must be positive")
    alpha0 = np.asarray(alpha0, dtype=float)
    results = []
    for dt in dts:
        traj = integrate(spec, alpha0, x0, t_end, dt, method="dopri5", rtol=rtol, atol=atol)
        targets = spec.velocity(traj.states[:-1], alpha0) if exact_targets else None
        alpha_hat, _ = affine_least_squares(spec, traj, velocity_targets=targets)
        results.append((dt, float(np.linalg.norm(alpha_hat - alpha0))))
    return results


def perturbed_velocity_sweep(
    spec: SystemSpec,
    alpha0,
    traj: Trajectory,
    eps_list,
    seed: int = 0,
) -> list[tuple[float, float]]:
    """Deviation of alpha_hat under a smooth bounded model perturbation.

    The perturbed field is F + e with e(x, a) = (eps/c) * sin(w_x.x + w_a.a) * u,
    where c = 1 + ||w_a|| guarantees ||e|| + ||de/da|| <= eps pointwise. Since
    e depends on alpha, the least squares is re-solved by fixed-point
    iteration (a contraction for small eps).
    """
    eps_list = [float(e) for e in eps_list]
    if any(e < 0 for e in eps_list):
        raise ValueError("eps values must be >= 0")
    alpha0 = np.asarray(alpha0, dtype=float)
    base_alpha, _ = affine_least_squares(spec, traj)

    rng = np.random.default_rng(seed)
    n, m = spec.state_dim, spec.param_dim
    w_x = rng.standard_normal(n)
    w_a = rng.standard_normal(m)
    u = rng.standard_normal(n)
    u /= np.linalg.norm(u)
    c = 1.0 + float(np.linalg.norm(w_a))

    states = traj.states[:-1]
    fd = (traj.states[1:] - traj.states[:-1]) / traj.dt
    phase_x = states @ w_x

    results = []
    for eps in eps_list:
        alpha = base_alpha.copy()
        for _ in range(100):
            e_vals = (eps / c) * np.sin(phase_x + alpha @ w_a)[:, None] * u
            alpha_new, _ = affine_least_squares(
                spec, traj, velocity_targets=fd - e_vals
            )
            if np.max(np.abs(alpha_new - alpha)) < 1e-13:
                alpha = alpha_new
                break
            alpha = alpha_new
        results.append((eps, float(np.linalg.norm(alpha - base_alpha))))
    return results

"""Catalog of parameterized dynamical systems.

Each system is described by a :class:`SystemSpec`: a velocity field
``F(x, alpha)`` together with the box of admissible parameters and, where the
parameter dependence is linear or affine, the decomposition
``F(x, alpha) = L(x) @ alpha + b(x)`` used by the closed-form solver in
:mod:`idode.oracle`.

Velocity and decomposition callables broadcast: they accept a single state of
shape ``(n,)`` or a batch ``(..., n)`` and parameters ``(m,)`` or ``(..., m)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

GRAVITY = 9.81  # m/s^2, compound double pendulum

__all__ = [
    "SystemSpec",
    "NotAffineError",
    "lorenz",
    "lorenz96",
    "lotka_volterra",
    "double_pendulum",
    "evaluate_affine",
    "get_system",
    "system_names",
]


class NotAffineError(ValueError):
    """Raised when an affine decomposition is requested but absent."""


@dataclass(frozen=True)
class SystemSpec:
    """A parameterized vector field dx/dt = F(x, alpha).

    Attributes:
        name: catalog identifier (also the CLI name).
        state_dim: dimension n of the state.
        param_dim: dimension m of the parameter vector.
        param_box: m closed intervals (lo, hi), lo < hi.
        velocity: (state, params) -> dx/dt, broadcasting over leading axes.
        affine_decomposition: optional state -> (L, b) with
            F(x, alpha) = L @ alpha + b; None when the parameter map is
            nonlinear.
        param_names: labels for reports and plots.
        kernel: name of the compiled stepping kernel, when one exists.
    """

    name: str
    state_dim: int
    param_dim: int
    param_box: tuple[tuple[float, float], ...]
    velocity: Callable[[np.ndarray, np.ndarray], np.ndarray]
    affine_decomposition: Optional[Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]] = None
    param_names: tuple[str, ...] = ()
    kernel: Optional[str] = None

    def __post_init__(self):
        if self.state_dim < 1 or self.param_dim < 1:
            raise ValueError("state_dim and param_dim must be positive")
        if len(self.param_box) != self.param_dim:
            raise ValueError("param_box length must equal param_dim")
        for lo, hi in self.param_box:
            if not lo < hi:
                raise ValueError(f"param_box interval ({lo}, {hi}) needs lo < hi")

    @property
    def is_affine(self) -> bool:
        return self.affine_decomposition is not None

    def box_midpoint(self) -> np.ndarray:
        return np.array([(lo + hi) / 2.0 for lo, hi in self.param_box])

    def clip_to_box(self, alpha: np.ndarray) -> np.ndarray:
        lo = np.array([b[0] for b in self.param_box])
        hi = np.array([b[1] for b in self.param_box])
        return np.clip(alpha, lo, hi)


def _lorenz_velocity(x: np.ndarray, a: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    a = np.asarray(a, dtype=float)
    sigma, rho, beta = a[..., 0], a[..., 1], a[..., 2]
    out = np.empty(np.broadcast_shapes(x.shape[:-1], a.shape[:-1]) + (3,))
    out[..., 0] = sigma * (x[..., 1] - x[..., 0])
    out[..., 1] = x[..., 0] * (rho - x[..., 2]) - x[..., 1]
    out[..., 2] = x[..., 0] * x[..., 1] - beta * x[..., 2]
    return out


def _lorenz_affine(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    base = x.shape[:-1]
    L = np.zeros(base + (3, 3))
    L[..., 0, 0] = x[..., 1] - x[..., 0]
    L[..., 1, 1] = x[..., 0]
    L[..., 2, 2] = -x[..., 2]
    b = np.zeros(base + (3,))
    b[..., 1] = -x[..., 0] * x[..., 2] - x[..., 1]
    b[..., 2] = x[..., 0] * x[..., 1]
    return L, b


def lorenz() -> SystemSpec:
    """Lorenz system: dx = sigma(y-x), dy = x(rho-z)-y, dz = xy - beta z."""
    return SystemSpec(
        name="lorenz",
        state_dim=3,
        param_dim=3,
        param_box=((9.0, 11.0), (27.0, 29.0), (2.0, 4.0)),
        velocity=_lorenz_velocity,
        affine_decomposition=_lorenz_affine,
        param_names=("sigma", "rho", "beta"),
        kernel="lorenz",
    )


def _lorenz96_velocity(x: np.ndarray, a: np.ndarray) -> np.ndarray:
    # Cyclic convention: all indices taken mod N (x_0 = x_N, x_-1 = x_{N-1}),
    # which makes the field equivariant under rotation of the state.
    x = np.asarray(x, dtype=float)
    a = np.asarray(a, dtype=float)
    forcing = a[..., 0]
    xp1 = np.roll(x, -1, axis=-1)
    xm2 = np.roll(x, 2, axis=-1)
    xm1 = np.roll(x, 1, axis=-1)
    return (xp1 - xm2) * xm1 - x + forcing[..., np.newaxis]


def _lorenz96_affine(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    dim = x.shape[-1]
    L = np.ones(x.shape[:-1] + (dim, 1))
    xp1 = np.roll(x, -1, axis=-1)
    xm2 = np.roll(x, 2, axis=-1)
    xm1 = np.roll(x, 1, axis=-1)
    b = (xp1 - xm2) * xm1 - x
    return L, b


def lorenz96(dim: int = 4) -> SystemSpec:
    """Lorenz96 with a single forcing parameter F on a cyclic lattice."""
    if dim < 4:
        raise ValueError(f"lorenz96 needs dim >= 4 (cyclic coupling undefined), got {dim}")
    return SystemSpec(
        name="lorenz96",
        state_dim=dim,
        param_dim=1,
        param_box=((10.0, 20.0),),
        velocity=_lorenz96_velocity,
        affine_decomposition=_lorenz96_affine,
        param_names=("F",),
        kernel="lorenz96",
    )


def _lvpp_velocity(x: np.ndarray, a: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    a = np.asarray(a, dtype=float)
    alpha, beta, delta, gamma = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    prey, pred = x[..., 0], x[..., 1]
    out = np.empty(np.broadcast_shapes(x.shape[:-1], a.shape[:-1]) + (2,))
    out[..., 0] = alpha * prey - beta * prey * pred
    out[..., 1] = delta * prey * pred - gamma * pred
    return out


def _lvpp_affine(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    base = x.shape[:-1]
    prey, pred = x[..., 0], x[..., 1]
    L = np.zeros(base + (2, 4))
    L[..., 0, 0] = prey
    L[..., 0, 1] = -prey * pred
    L[..., 1, 2] = prey * pred
    L[..., 1, 3] = -pred
    return L, np.zeros(base + (2,))


def lotka_volterra() -> SystemSpec:
    """Lotka-Volterra predator-prey; purely linear in (alpha, beta, delta, gamma)."""
    return SystemSpec(
        name="lvpp",
        state_dim=2,
        param_dim=4,
        param_box=((0.5, 1.5),) * 4,
        velocity=_lvpp_velocity,
        affine_decomposition=_lvpp_affine,
        param_names=("alpha", "beta", "delta", "gamma"),
        kernel="lvpp",
    )


def _double_pendulum_velocity(x: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Compound double pendulum in canonical coordinates (th1, th2, p1, p2).

    Both rods share mass m and length l; angles are unwrapped reals.
    """
    x = np.asarray(x, dtype=float)
    a = np.asarray(a, dtype=float)
    th1, th2, p1, p2 = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    m, length = a[..., 0], a[..., 1]
    ml2 = m * length * length
    c = np.cos(th1 - th2)
    s = np.sin(th1 - th2)
    den = 16.0 - 9.0 * c * c
    th1dot = (6.0 / ml2) * (2.0 * p1 - 3.0 * c * p2) / den
    th2dot = (6.0 / ml2) * (8.0 * p2 - 3.0 * c * p1) / den
    g_over_l = GRAVITY / length
    p1dot = -0.5 * ml2 * (th1dot * th2dot * s + 3.0 * g_over_l * np.sin(th1))
    p2dot = -0.5 * ml2 * (-th1dot * th2dot * s + g_over_l * np.sin(th2))
    out = np.empty(np.broadcast_shapes(x.shape[:-1], a.shape[:-1]) + (4,))
    out[..., 0] = th1dot
    out[..., 1] = th2dot
    out[..., 2] = p1dot
    out[..., 3] = p2dot
    return out


def double_pendulum() -> SystemSpec:
    """Compound double pendulum; the parameter map (m, l) is nonlinear."""
    return SystemSpec(
        name="double-pendulum",
        state_dim=4,
        param_dim=2,
        param_box=((1.0, 2.0), (1.0, 2.0)),
        velocity=_double_pendulum_velocity,
        affine_decomposition=None,
        param_names=("m", "l"),
        kernel="double-pendulum",
    )


def evaluate_affine(spec: SystemSpec, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (L, b) with velocity(x, alpha) = L @ alpha + b at fixed x."""
    if spec.affine_decomposition is None:
        raise NotAffineError(f"system '{spec.name}' has no affine decomposition")
    return spec.affine_decomposition(np.asarray(x, dtype=float))


_CATALOG: dict[str, Callable[..., SystemSpec]] = {
    "lorenz": lorenz,
    "lorenz96": lorenz96,
    "lvpp": lotka_volterra,
    "double-pendulum": double_pendulum,
}


def system_names() -> list[str]:
    return sorted(_CATALOG)


def get_system(name: str, **kwargs) -> SystemSpec:
    """Look up a catalog system by its CLI name."""
    try:
        factory = _CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown system '{name}'; choose from {system_names()}") from None
    return factory(**kwargs)

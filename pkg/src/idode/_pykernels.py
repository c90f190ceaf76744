"""Pure-python stepping kernels: fixed-step RK4 and adaptive Dormand-Prince 5(4).

These are the fallback twins of the compiled kernels in ``_ckernels.pyx``.
Both implementations follow the same operation order (and the extension is
built with FP contraction off) so that, for polynomial right-hand sides, the
two backends agree to the last bit over short horizons.

The systems here are autonomous, so velocity callables take only the state.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

BLOWUP_LIMIT = 1e8

# Dormand-Prince 5(4) tableau.
A21 = 1 / 5
A31, A32 = 3 / 40, 9 / 40
A41, A42, A43 = 44 / 45, -56 / 15, 32 / 9
A51, A52, A53, A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
A61, A62, A63, A64, A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
B1, B3, B4, B5, B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
E1, E3, E4, E5, E6, E7 = (
    71 / 57600,
    -71 / 16695,
    71 / 1920,
    -17253 / 339200,
    22 / 525,
    -1 / 40,
)

# Quartic dense-output polynomials: y(t + theta*h) = y + h * sum_s k_s * P_s(theta)
# with P_s(theta) = theta * (D[s][0] + theta * (D[s][1] + theta * (D[s][2] + theta * D[s][3]))).
DENSE = (
    (1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432),
    (0.0, 0.0, 0.0, 0.0),
    (0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799),
    (0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072),
    (0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632),
    (0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844),
    (0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423),
)

SAFETY = 0.9
FAC_MIN = 0.2
FAC_MAX = 10.0
ERR_EXP = -0.2  # -1/(order of the embedded pair)


class BlowUpError(RuntimeError):
    """State left the finite/bounded domain during integration."""

    def __init__(self, message: str, last_valid_time: float):
        super().__init__(message)
        self.last_valid_time = last_valid_time


def _bounded(y: np.ndarray) -> bool:
    return bool(np.all(np.isfinite(y)) and np.max(np.abs(y)) <= BLOWUP_LIMIT)


def rk4_path(
    f: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    dt: float,
    n_out: int,
    substeps: int = 1,
) -> np.ndarray:
    """Classic RK4 on a uniform grid with `substeps` internal steps per interval."""
    y = np.array(x0, dtype=float)
    out = np.empty((n_out, y.size))
    out[0] = y
    h = dt / substeps
    hh = 0.5 * h
    h6 = h / 6.0
    for i in range(1, n_out):
        for _ in range(substeps):
            k1 = f(y)
            k2 = f(y + hh * k1)
            k3 = f(y + hh * k2)
            k4 = f(y + h * k3)
            y = y + h6 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not _bounded(y):
            raise BlowUpError(
                f"state exceeded {BLOWUP_LIMIT:g} at t={i * dt:g}", last_valid_time=(i - 1) * dt
            )
        out[i] = y
    return out


def _rms(v: np.ndarray) -> float:
    return math.sqrt(float(np.mean(v * v)))


def _initial_step(f, y0, f0, rtol, atol, t_end):
    sc = atol + np.abs(y0) * rtol
    d0 = _rms(y0 / sc)
    d1 = _rms(f0 / sc)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    y1 = y0 + h0 * f0
    f1 = f(y1)
    d2 = _rms((f1 - f0) / sc) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, t_end)


def dopri5_path(
    f: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    dt: float,
    n_out: int,
    rtol: float = 1e-9,
    atol: float = 1e-9,
) -> np.ndarray:
    """Adaptive Dormand-Prince 5(4) sampled on the uniform grid k*dt via dense output."""
    y = np.array(x0, dtype=float)
    out = np.empty((n_out, y.size))
    out[0] = y
    if n_out == 1:
        return out
    t_end = (n_out - 1) * dt
    k1 = f(y)
    h = _initial_step(f, y, k1, rtol, atol, t_end)
    t = 0.0
    next_i = 1
    rejected = False
    while next_i < n_out:
        if h > t_end - t:
            h = t_end - t
        k2 = f(y + h * (A21 * k1))
        k3 = f(y + h * (A31 * k1 + A32 * k2))
        k4 = f(y + h * (A41 * k1 + A42 * k2 + A43 * k3))
        k5 = f(y + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4))
        k6 = f(y + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5))
        dy = h * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6)
        y_new = y + dy
        k7 = f(y_new)
        err = h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7)
        sc = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        with np.errstate(invalid="ignore", over="ignore"):
            err_norm = _rms(err / sc)
        if math.isfinite(err_norm) and err_norm <= 1.0:
            t_new = t + h
            if not _bounded(y_new):
                raise BlowUpError(
                    f"state exceeded {BLOWUP_LIMIT:g} near t={t_new:g}", last_valid_time=t
                )
            while next_i < n_out and next_i * dt <= t_new + 1e-12 * dt:
                theta = (next_i * dt - t) / h
                if theta < 0.0:
                    theta = 0.0
                elif theta > 1.0:
                    theta = 1.0
                acc = np.zeros_like(y)
                for ks, d in zip((k1, k2, k3, k4, k5, k6, k7), DENSE):
                    p = theta * (d[0] + theta * (d[1] + theta * (d[2] + theta * d[3])))
                    acc = acc + p * ks
                out[next_i] = y + h * acc
                next_i += 1
            t = t_new
            y = y_new
            k1 = k7
            if err_norm == 0.0:
                fac = FAC_MAX
            else:
                fac = min(FAC_MAX, max(FAC_MIN, SAFETY * err_norm**ERR_EXP))
            if rejected:
                fac = min(1.0, fac)
            h *= fac
            rejected = False
        else:
            if math.isfinite(err_norm):
                fac = max(FAC_MIN, SAFETY * err_norm**ERR_EXP)
            else:
                fac = FAC_MIN
            h *= fac
            rejected = True
            if h < 1e-14 * max(1.0, t):
                raise BlowUpError(f"step size underflow at t={t:g}", last_valid_time=t)
    return out

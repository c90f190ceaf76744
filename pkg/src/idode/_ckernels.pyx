# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled stepping kernels for the catalog systems.

Twin of ``_pykernels``: same tableaus, same step-control and dense-output
arithmetic in the same operation order. Only systems with a hand-written
velocity kernel below are supported; anything else goes through the
pure-python path.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, fmax, isfinite, pow, sqrt

from idode._pykernels import BlowUpError

cnp.import_array()

cdef double BLOWUP_LIMIT = 1e8

cdef double A21 = 1.0 / 5.0
cdef double A31 = 3.0 / 40.0, A32 = 9.0 / 40.0
cdef double A41 = 44.0 / 45.0, A42 = -56.0 / 15.0, A43 = 32.0 / 9.0
cdef double A51 = 19372.0 / 6561.0, A52 = -25360.0 / 2187.0
cdef double A53 = 64448.0 / 6561.0, A54 = -212.0 / 729.0
cdef double A61 = 9017.0 / 3168.0, A62 = -355.0 / 33.0, A63 = 46732.0 / 5247.0
cdef double A64 = 49.0 / 176.0, A65 = -5103.0 / 18656.0
cdef double B1 = 35.0 / 384.0, B3 = 500.0 / 1113.0, B4 = 125.0 / 192.0
cdef double B5 = -2187.0 / 6784.0, B6 = 11.0 / 84.0
cdef double E1 = 71.0 / 57600.0, E3 = -71.0 / 16695.0, E4 = 71.0 / 1920.0
cdef double E5 = -17253.0 / 339200.0, E6 = 22.0 / 525.0, E7 = -1.0 / 40.0

cdef double[7][4] DENSE = [
    [1.0, -8048581381.0 / 2820520608.0, 8663915743.0 / 2820520608.0,
     -12715105075.0 / 11282082432.0],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200.0 / 32700410799.0, -68118460800.0 / 10900136933.0,
     87487479700.0 / 32700410799.0],
    [0.0, -1754552775.0 / 470086768.0, 14199869525.0 / 1410260304.0,
     -10690763975.0 / 1880347072.0],
    [0.0, 127303824393.0 / 49829197408.0, -318862633887.0 / 49829197408.0,
     701980252875.0 / 199316789632.0],
    [0.0, -282668133.0 / 205662961.0, 2019193451.0 / 616988883.0,
     -1453857185.0 / 822651844.0],
    [0.0, 40617522.0 / 29380423.0, -110615467.0 / 29380423.0,
     69997945.0 / 29380423.0],
]

cdef double SAFETY = 0.9
cdef double FAC_MIN = 0.2
cdef double FAC_MAX = 10.0
cdef double ERR_EXP = -0.2

from libc.math cimport cos, sin

ctypedef void (*velocity_fn)(const double*, const double*, double*, Py_ssize_t) noexcept nogil


cdef void vel_lorenz(const double* x, const double* a, double* out, Py_ssize_t n) noexcept nogil:
    out[0] = a[0] * (x[1] - x[0])
    out[1] = x[0] * (a[1] - x[2]) - x[1]
    out[2] = x[0] * x[1] - a[2] * x[2]


cdef void vel_lorenz96(const double* x, const double* a, double* out, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, ip1, im1, im2
    for i in range(n):
        ip1 = i + 1 if i + 1 < n else i + 1 - n
        im1 = i - 1 if i >= 1 else i - 1 + n
        im2 = i - 2 if i >= 2 else i - 2 + n
        out[i] = (x[ip1] - x[im2]) * x[im1] - x[i] + a[0]


cdef void vel_lvpp(const double* x, const double* a, double* out, Py_ssize_t n) noexcept nogil:
    out[0] = a[0] * x[0] - a[1] * x[0] * x[1]
    out[1] = a[2] * x[0] * x[1] - a[3] * x[1]


cdef double GRAVITY = 9.81

cdef void vel_double_pendulum(const double* x, const double* a, double* out,
                              Py_ssize_t n) noexcept nogil:
    cdef double th1 = x[0], th2 = x[1], p1 = x[2], p2 = x[3]
    cdef double m = a[0], length = a[1]
    cdef double ml2 = m * length * length
    cdef double c = cos(th1 - th2)
    cdef double s = sin(th1 - th2)
    cdef double den = 16.0 - 9.0 * c * c
    cdef double th1dot = (6.0 / ml2) * (2.0 * p1 - 3.0 * c * p2) / den
    cdef double th2dot = (6.0 / ml2) * (8.0 * p2 - 3.0 * c * p1) / den
    cdef double g_over_l = GRAVITY / length
    out[0] = th1dot
    out[1] = th2dot
    out[2] = -0.5 * ml2 * (th1dot * th2dot * s + 3.0 * g_over_l * sin(th1))
    out[3] = -0.5 * ml2 * (-th1dot * th2dot * s + g_over_l * sin(th2))


KERNEL_NAMES = ("lorenz", "lorenz96", "lvpp", "double-pendulum")

cdef velocity_fn _lookup(str kernel) except NULL:
    if kernel == "lorenz":
        return vel_lorenz
    if kernel == "lorenz96":
        return vel_lorenz96
    if kernel == "lvpp":
        return vel_lvpp
    if kernel == "double-pendulum":
        return vel_double_pendulum
    raise KeyError(f"no compiled kernel named '{kernel}'")


cdef bint _bounded(const double* y, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t j
    for j in range(n):
        if not isfinite(y[j]) or fabs(y[j]) > BLOWUP_LIMIT:
            return False
    return True


def rk4_path(str kernel, double[::1] params, double[::1] x0, double dt,
             Py_ssize_t n_out, int substeps=1):
    cdef velocity_fn f = _lookup(kernel)
    cdef Py_ssize_t n = x0.shape[0]
    out_arr = np.empty((n_out, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    work_arr = np.empty((6, n), dtype=np.float64)
    cdef double[:, ::1] w = work_arr
    cdef double* y = &w[0, 0]
    cdef double* k1 = &w[1, 0]
    cdef double* k2 = &w[2, 0]
    cdef double* k3 = &w[3, 0]
    cdef double* k4 = &w[4, 0]
    cdef double* ytmp = &w[5, 0]
    cdef const double* a = &params[0]
    cdef double h = dt / substeps
    cdef double hh = 0.5 * h
    cdef double h6 = h / 6.0
    cdef Py_ssize_t i, j
    cdef int s
    cdef Py_ssize_t bad_i = -1
    for j in range(n):
        y[j] = x0[j]
        out[0, j] = y[j]
    with nogil:
        for i in range(1, n_out):
            for s in range(substeps):
                f(y, a, k1, n)
                for j in range(n):
                    ytmp[j] = y[j] + hh * k1[j]
                f(ytmp, a, k2, n)
                for j in range(n):
                    ytmp[j] = y[j] + hh * k2[j]
                f(ytmp, a, k3, n)
                for j in range(n):
                    ytmp[j] = y[j] + h * k3[j]
                f(ytmp, a, k4, n)
                for j in range(n):
                    y[j] = y[j] + h6 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
            if not _bounded(y, n):
                bad_i = i
                break
            for j in range(n):
                out[i, j] = y[j]
    if bad_i >= 0:
        raise BlowUpError(
            f"state exceeded {BLOWUP_LIMIT:g} at t={bad_i * dt:g}",
            last_valid_time=(bad_i - 1) * dt,
        )
    return out_arr


def dopri5_path(str kernel, double[::1] params, double[::1] x0, double dt,
                Py_ssize_t n_out, double rtol=1e-9, double atol=1e-9):
    cdef velocity_fn f = _lookup(kernel)
    cdef Py_ssize_t n = x0.shape[0]
    out_arr = np.empty((n_out, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t j
    for j in range(n):
        out[0, j] = x0[j]
    if n_out == 1:
        return out_arr
    work_arr = np.empty((12, n), dtype=np.float64)
    cdef double[:, ::1] w = work_arr
    cdef double* y = &w[0, 0]
    cdef double* ynew = &w[1, 0]
    cdef double* k1 = &w[2, 0]
    cdef double* k2 = &w[3, 0]
    cdef double* k3 = &w[4, 0]
    cdef double* k4 = &w[5, 0]
    cdef double* k5 = &w[6, 0]
    cdef double* k6 = &w[7, 0]
    cdef double* k7 = &w[8, 0]
    cdef double* ytmp = &w[9, 0]
    cdef double* err = &w[10, 0]
    cdef double* sc = &w[11, 0]
    cdef const double* a = &params[0]
    cdef double t_end = (n_out - 1) * dt
    cdef double t = 0.0, t_new, h, u, r, err_norm, fac, theta, p, acc
    cdef double d0, d1, d2, h0, h1
    cdef Py_ssize_t next_i = 1
    cdef bint rejected = False
    cdef int status = 0  # 1 = blow-up, 2 = step underflow
    cdef double fail_t = 0.0
    cdef Py_ssize_t ss

    for j in range(n):
        y[j] = x0[j]
    with nogil:
        f(y, a, k1, n)
        # initial step heuristic (same as the python twin)
        d0 = 0.0
        d1 = 0.0
        for j in range(n):
            sc[j] = atol + fabs(y[j]) * rtol
            r = y[j] / sc[j]
            d0 += r * r
            r = k1[j] / sc[j]
            d1 += r * r
        d0 = sqrt(d0 / n)
        d1 = sqrt(d1 / n)
        h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
        for j in range(n):
            ytmp[j] = y[j] + h0 * k1[j]
        f(ytmp, a, k2, n)
        d2 = 0.0
        for j in range(n):
            r = (k2[j] - k1[j]) / sc[j]
            d2 += r * r
        d2 = sqrt(d2 / n) / h0
        if d1 <= 1e-15 and d2 <= 1e-15:
            h1 = fmax(1e-6, h0 * 1e-3)
        else:
            h1 = pow(0.01 / fmax(d1, d2), 0.2)
        h = 100 * h0
        if h1 < h:
            h = h1
        if t_end < h:
            h = t_end

        while next_i < n_out:
            if h > t_end - t:
                h = t_end - t
            for j in range(n):
                u = A21 * k1[j]
                ytmp[j] = y[j] + h * u
            f(ytmp, a, k2, n)
            for j in range(n):
                u = A31 * k1[j]
                u += A32 * k2[j]
                ytmp[j] = y[j] + h * u
            f(ytmp, a, k3, n)
            for j in range(n):
                u = A41 * k1[j]
                u += A42 * k2[j]
                u += A43 * k3[j]
                ytmp[j] = y[j] + h * u
            f(ytmp, a, k4, n)
            for j in range(n):
                u = A51 * k1[j]
                u += A52 * k2[j]
                u += A53 * k3[j]
                u += A54 * k4[j]
                ytmp[j] = y[j] + h * u
            f(ytmp, a, k5, n)
            for j in range(n):
                u = A61 * k1[j]
                u += A62 * k2[j]
                u += A63 * k3[j]
                u += A64 * k4[j]
                u += A65 * k5[j]
                ytmp[j] = y[j] + h * u
            f(ytmp, a, k6, n)
            for j in range(n):
                u = B1 * k1[j]
                u += B3 * k3[j]
                u += B4 * k4[j]
                u += B5 * k5[j]
                u += B6 * k6[j]
                ynew[j] = y[j] + h * u
            f(ynew, a, k7, n)
            err_norm = 0.0
            for j in range(n):
                u = E1 * k1[j]
                u += E3 * k3[j]
                u += E4 * k4[j]
                u += E5 * k5[j]
                u += E6 * k6[j]
                u += E7 * k7[j]
                err[j] = h * u
                r = fabs(y[j])
                u = fabs(ynew[j])
                if u > r:
                    r = u
                sc[j] = atol + rtol * r
                r = err[j] / sc[j]
                err_norm += r * r
            err_norm = sqrt(err_norm / n)
            if isfinite(err_norm) and err_norm <= 1.0:
                t_new = t + h
                if not _bounded(ynew, n):
                    status = 1
                    fail_t = t
                    break
                while next_i < n_out and next_i * dt <= t_new + 1e-12 * dt:
                    theta = (next_i * dt - t) / h
                    if theta < 0.0:
                        theta = 0.0
                    elif theta > 1.0:
                        theta = 1.0
                    for j in range(n):
                        err[j] = 0.0  # reuse as interpolation accumulator
                    for ss in range(7):
                        p = theta * (DENSE[ss][0] + theta * (DENSE[ss][1]
                            + theta * (DENSE[ss][2] + theta * DENSE[ss][3])))
                        if ss == 0:
                            for j in range(n):
                                err[j] = err[j] + p * k1[j]
                        elif ss == 1:
                            for j in range(n):
                                err[j] = err[j] + p * k2[j]
                        elif ss == 2:
                            for j in range(n):
                                err[j] = err[j] + p * k3[j]
                        elif ss == 3:
                            for j in range(n):
                                err[j] = err[j] + p * k4[j]
                        elif ss == 4:
                            for j in range(n):
                                err[j] = err[j] + p * k5[j]
                        elif ss == 5:
                            for j in range(n):
                                err[j] = err[j] + p * k6[j]
                        else:
                            for j in range(n):
                                err[j] = err[j] + p * k7[j]
                    for j in range(n):
                        out[next_i, j] = y[j] + h * err[j]
                    next_i += 1
                t = t_new
                for j in range(n):
                    y[j] = ynew[j]
                    k1[j] = k7[j]
                if err_norm == 0.0:
                    fac = FAC_MAX
                else:
                    fac = SAFETY * pow(err_norm, ERR_EXP)
                    if fac < FAC_MIN:
                        fac = FAC_MIN
                    elif fac > FAC_MAX:
                        fac = FAC_MAX
                if rejected and fac > 1.0:
                    fac = 1.0
                h *= fac
                rejected = False
            else:
                if isfinite(err_norm):
                    fac = SAFETY * pow(err_norm, ERR_EXP)
                    if fac < FAC_MIN:
                        fac = FAC_MIN
                else:
                    fac = FAC_MIN
                h *= fac
                rejected = True
                if h < 1e-14 * fmax(1.0, t):
                    status = 2
                    fail_t = t
                    break
    if status == 1:
        raise BlowUpError(
            f"state exceeded {BLOWUP_LIMIT:g} near t={fail_t:g}", last_valid_time=fail_t
        )
    if status == 2:
        raise BlowUpError(f"step size underflow at t={fail_t:g}", last_valid_time=fail_t)
    return out_arr

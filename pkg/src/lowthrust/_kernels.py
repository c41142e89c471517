"""Hot numeric kernels shared by the dynamics and shooting solvers.

Everything here is written against the backend switch: with numba available
(default) the functions are compiled with ``@jitted``; with
``LOWTHRUST_NUMBA=0`` they run as plain Python/numpy.  All quantities are in
canonical heliocentric units (AU, mu=1, mass normalized by the reference
mass); thruster polynomials are evaluated in their native N/s/AU units and
scaled by the ``fs`` (N -> canonical force) and ``vs`` (Isp[s] -> canonical
exhaust velocity) factors.

Costate rates are exact to machine precision: the Hamiltonian gradient with
respect to the six orbital elements is evaluated by complex-step
differentiation, which avoids both hand-derived M/D partials and the
subtractive cancellation of real finite differences.
"""

import cmath
import math

import numpy as np

from .backend import jitted

# Dormand-Prince 5(4) tableau
_RK_C = np.array([0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0])
_RK_A = np.zeros((7, 6))
_RK_A[1, 0] = 1.0 / 5.0
_RK_A[2, :2] = (3.0 / 40.0, 9.0 / 40.0)
_RK_A[3, :3] = (44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0)
_RK_A[4, :4] = (19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0)
_RK_A[5, :5] = (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0,
                -5103.0 / 18656.0)
_RK_A[6, :6] = (35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0,
                11.0 / 84.0)
_RK_B = np.array([35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0,
                  11.0 / 84.0, 0.0])
# b5 - b4 (error estimate weights)
_RK_E = np.array([71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0,
                  -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0])

RHS_FUEL = 0
RHS_TIME = 1

STATUS_OK = 0
STATUS_STEP_UNDERFLOW = 1
STATUS_NONFINITE = 2
STATUS_MAXSTEPS = 3

_CS_H = 1e-100  # complex-step size; second-order error term underflows


@jitted
def thr_eval(r, thr):
    """(T_max [N], Isp [s]) at heliocentric distance r [AU]."""
    if thr[0] == 0.0:
        return thr[1], thr[2]
    if r <= thr[13]:
        return thr[15], thr[16]
    if r >= thr[14]:
        return 0.0, 0.0
    t = thr[7]
    for j in range(6, 2, -1):
        t = t * r + thr[j]
    i = thr[12]
    for j in range(11, 7, -1):
        i = i * r + thr[j]
    if t < 0.0:
        t = 0.0
    if i < 0.0:
        i = 0.0
    return t, i


@jitted
def _thr_eval_c(r, thr):
    """Complex-capable thruster evaluation; branches on the real part."""
    if thr[0] == 0.0:
        return thr[1] + 0j, thr[2] + 0j
    if r.real <= thr[13]:
        return thr[15] + 0j, thr[16] + 0j
    if r.real >= thr[14]:
        return 0j, 0j
    t = thr[7] + 0j
    for j in range(6, 2, -1):
        t = t * r + thr[j]
    i = thr[12] + 0j
    for j in range(11, 7, -1):
        i = i * r + thr[j]
    return t, i


@jitted
def mee_matrices(s, mu):
    """Control-input matrix M (6x3, RTN frame) and drift D (6) of the MEE rates."""
    p, f, g, h, k, L = s[0], s[1], s[2], s[3], s[4], s[5]
    cl = math.cos(L)
    sl = math.sin(L)
    w = 1.0 + f * cl + g * sl
    s2 = 1.0 + h * h + k * k
    root = math.sqrt(p / mu)
    hsk = h * sl - k * cl
    M = np.zeros((6, 3))
    M[0, 1] = root * 2.0 * p / w
    M[1, 0] = root * sl
    M[1, 1] = root * (((w + 1.0) * cl + f) / w)
    M[1, 2] = -root * hsk * g / w
    M[2, 0] = -root * cl
    M[2, 1] = root * (((w + 1.0) * sl + g) / w)
    M[2, 2] = root * hsk * f / w
    M[3, 2] = root * s2 * cl / (2.0 * w)
    M[4, 2] = root * s2 * sl / (2.0 * w)
    M[5, 2] = root * hsk / w
    D = np.zeros(6)
    D[5] = math.sqrt(mu * p) * (w / p) ** 2
    return M, D


@jitted
def mee_to_rv(s, mu):
    """MEE spatial state to inertial (r, v) in canonical units."""
    p, f, g, h, k, L = s[0], s[1], s[2], s[3], s[4], s[5]
    cl = math.cos(L)
    sl = math.sin(L)
    w = 1.0 + f * cl + g * sl
    s2 = 1.0 + h * h + k * k
    a2 = h * h - k * k
    r = p / w
    sq = math.sqrt(mu / p)
    rv = np.empty(6)
    rv[0] = (r / s2) * (cl + a2 * cl + 2.0 * h * k * sl)
    rv[1] = (r / s2) * (sl - a2 * sl + 2.0 * h * k * cl)
    rv[2] = (2.0 * r / s2) * (h * sl - k * cl)
    rv[3] = -(sq / s2) * (sl + a2 * sl - 2.0 * h * k * cl + g - 2.0 * f * h * k + a2 * g)
    rv[4] = -(sq / s2) * (-cl + a2 * cl + 2.0 * h * k * sl - f + 2.0 * g * h * k + a2 * f)
    rv[5] = (2.0 * sq / s2) * (h * cl + k * sl + f * h + g * k)
    return rv


@jitted
def rtn_basis(rv):
    """Rows are the radial, transverse, normal unit vectors of the state."""
    rx, ry, rz = rv[0], rv[1], rv[2]
    vx, vy, vz = rv[3], rv[4], rv[5]
    rn = math.sqrt(rx * rx + ry * ry + rz * rz)
    hx = ry * vz - rz * vy
    hy = rz * vx - rx * vz
    hz = rx * vy - ry * vx
    hn = math.sqrt(hx * hx + hy * hy + hz * hz)
    B = np.empty((3, 3))
    B[0, 0] = rx / rn
    B[0, 1] = ry / rn
    B[0, 2] = rz / rn
    B[2, 0] = hx / hn
    B[2, 1] = hy / hn
    B[2, 2] = hz / hn
    B[1, 0] = B[2, 1] * B[0, 2] - B[2, 2] * B[0, 1]
    B[1, 1] = B[2, 2] * B[0, 0] - B[2, 0] * B[0, 2]
    B[1, 2] = B[2, 0] * B[0, 1] - B[2, 1] * B[0, 0]
    return B


@jitted
def _ham_terms_c(sp, sf, sg, sh, sk, sL, m, lam, alpha, u, eps, lam0, thr, fs, vs, mu):
    """State-dependent Hamiltonian terms, state promoted to complex.

    alpha and u are held fixed: the costate equation is the partial derivative
    of H at the optimal control.  For the time-optimal problem pass lam0 = 0
    (its running cost is constant and contributes no gradient).
    """
    cl = cmath.cos(sL)
    sl = cmath.sin(sL)
    w = 1.0 + sf * cl + sg * sl
    s2 = 1.0 + sh * sh + sk * sk
    root = cmath.sqrt(sp / mu)
    hsk = sh * sl - sk * cl
    # lam_s^T M alpha
    lMa = (lam[0] * root * 2.0 * sp / w * alpha[1]
           + lam[1] * (root * sl * alpha[0]
                       + root * (((w + 1.0) * cl + sf) / w) * alpha[1]
                       - root * hsk * sg / w * alpha[2])
           + lam[2] * (-root * cl * alpha[0]
                       + root * (((w + 1.0) * sl + sg) / w) * alpha[1]
                       + root * hsk * sf / w * alpha[2])
           + lam[3] * root * s2 * cl / (2.0 * w) * alpha[2]
           + lam[4] * root * s2 * sl / (2.0 * w) * alpha[2]
           + lam[5] * root * hsk / w * alpha[2])
    lD = lam[5] * cmath.sqrt(mu * sp) * (w / sp) ** 2
    r = sp / w
    tN, isp = _thr_eval_c(r, thr)
    tmax = tN * fs
    H = lD + (tmax / m) * lMa * u
    if isp.real >= 1.0:
        vex = isp * vs
        flow = tmax / vex
        H += -lam[6] * flow * u
        if eps > 0.0 and 0.0 < u < 1.0:
            H += lam0 * flow * (u - eps * cmath.log(u * (1.0 - u)))
        else:
            H += lam0 * flow * u
    return H


@jitted
def hamiltonian_fuel(y, alpha, u, eps, lam0, thr, fs, vs, mu):
    """Real fuel Hamiltonian at state+costate vector y (14,)."""
    H = _ham_terms_c(y[0] + 0j, y[1] + 0j, y[2] + 0j, y[3] + 0j, y[4] + 0j,
                     y[5] + 0j, y[6] + 0j, y[7:14], alpha, u, eps, lam0,
                     thr, fs, vs, mu)
    return H.real


@jitted
def hamiltonian_time(y, alpha, lam0, thr, fs, vs, mu):
    """Real time-optimal Hamiltonian (full throttle, running cost lam0)."""
    H = _ham_terms_c(y[0] + 0j, y[1] + 0j, y[2] + 0j, y[3] + 0j, y[4] + 0j,
                     y[5] + 0j, y[6] + 0j, y[7:14], alpha, 1.0, 0.0, 0.0,
                     thr, fs, vs, mu)
    return H.real + lam0


@jitted
def fuel_control(y, eps, lam0, thr, fs, vs, mu):
    """Optimal (alpha, u, switching function) for the smoothed fuel problem."""
    s = y[0:6]
    m = y[6]
    lam = y[7:14]
    M, _D = mee_matrices(s, mu)
    mtl = np.zeros(3)
    for i in range(3):
        for j in range(6):
            mtl[i] += M[j, i] * lam[j]
    nm = math.sqrt(mtl[0] * mtl[0] + mtl[1] * mtl[1] + mtl[2] * mtl[2])
    alpha = np.zeros(3)
    if nm > 0.0:
        alpha[0] = -mtl[0] / nm
        alpha[1] = -mtl[1] / nm
        alpha[2] = -mtl[2] / nm
    w = 1.0 + s[1] * math.cos(s[5]) + s[2] * math.sin(s[5])
    r = s[0] / w
    tN, isp = thr_eval(r, thr)
    if tN <= 0.0 or isp < 1.0:
        return alpha, 0.0, 0.0
    vex = isp * vs
    sf = 1.0 - vex * nm / (lam0 * m) - lam[6] / lam0
    u = 2.0 * eps / (2.0 * eps + sf + math.sqrt(sf * sf + 4.0 * eps * eps))
    return alpha, u, sf


@jitted
def rhs_eval(rhs_id, t, y, eps, lam0, thr, fs, vs, mu):
    """State+costate rates for the fuel (rhs_id=0) or time (rhs_id=1) problem.

    y = [p, f, g, h, k, L, m, lam_p..lam_L, lam_m] in canonical units.
    """
    s = y[0:6]
    m = y[6]
    lam = y[7:14]
    M, D = mee_matrices(s, mu)
    mtl = np.zeros(3)
    for i in range(3):
        for j in range(6):
            mtl[i] += M[j, i] * lam[j]
    nm = math.sqrt(mtl[0] * mtl[0] + mtl[1] * mtl[1] + mtl[2] * mtl[2])
    alpha = np.zeros(3)
    if nm > 0.0:
        alpha[0] = -mtl[0] / nm
        alpha[1] = -mtl[1] / nm
        alpha[2] = -mtl[2] / nm
    w = 1.0 + s[1] * math.cos(s[5]) + s[2] * math.sin(s[5])
    r = s[0] / w
    tN, isp = thr_eval(r, thr)
    engine_on = tN > 0.0 and isp >= 1.0
    if rhs_id == RHS_TIME:
        u = 1.0 if engine_on else 0.0
        eps_eff = 0.0
    else:
        if engine_on:
            vex = isp * vs
            sf = 1.0 - vex * nm / (lam0 * m) - lam[6] / lam0
            u = 2.0 * eps / (2.0 * eps + sf + math.sqrt(sf * sf + 4.0 * eps * eps))
        else:
            u = 0.0
        eps_eff = eps

    dy = np.zeros(14)
    tmax = tN * fs
    acc = tmax * u / m if engine_on else 0.0
    for j in range(6):
        dy[j] = D[j] + acc * (M[j, 0] * alpha[0] + M[j, 1] * alpha[1] + M[j, 2] * alpha[2])
    if engine_on:
        dy[6] = -tmax * u / (isp * vs)
    # lam_s rates by complex step of H in each element (coast arcs still
    # couple the costates through the drift term)
    cost_mult = 0.0 if rhs_id == RHS_TIME else lam0
    for j in range(6):
        s0 = y[0] + 0j
        s1 = y[1] + 0j
        s2c = y[2] + 0j
        s3 = y[3] + 0j
        s4 = y[4] + 0j
        s5 = y[5] + 0j
        if j == 0:
            s0 += 1j * _CS_H
        elif j == 1:
            s1 += 1j * _CS_H
        elif j == 2:
            s2c += 1j * _CS_H
        elif j == 3:
            s3 += 1j * _CS_H
        elif j == 4:
            s4 += 1j * _CS_H
        else:
            s5 += 1j * _CS_H
        Hc = _ham_terms_c(s0, s1, s2c, s3, s4, s5, m + 0j, lam, alpha,
                          u, eps_eff, cost_mult, thr, fs, vs, mu)
        dy[7 + j] = -Hc.imag / _CS_H
    # lam_m rate: dH/dm = +tmax*u*nm/m^2 (alpha optimal => lam^T M alpha = -nm)
    if engine_on:
        dy[13] = -tmax * u * nm / (m * m)
    return dy


@jitted
def integrate_adjoint(rhs_id, y0, t0, t1, rtol, atol, eps, lam0, thr, fs, vs, mu,
                      max_steps, ts_out, ys_out, record):
    """Adaptive DP5(4) over the state+costate system.

    When ``record`` is nonzero the accepted step endpoints are written into
    ts_out/ys_out.  Returns (y_final, status, n_recorded).
    """
    y = y0.copy()
    t = t0
    span = t1 - t0
    if span == 0.0:
        if record != 0:
            ts_out[0] = t0
            ys_out[0, :] = y
        return y, STATUS_OK, 1
    direction = 1.0 if span > 0.0 else -1.0
    dt = span * 0.01
    min_dt = abs(span) * 1e-14
    K = np.zeros((7, 14))
    n_rec = 0
    if record != 0:
        ts_out[0] = t0
        ys_out[0, :] = y
        n_rec = 1
    k1 = rhs_eval(rhs_id, t, y, eps, lam0, thr, fs, vs, mu)
    steps = 0
    while (t1 - t) * direction > 0.0:
        if steps >= max_steps:
            return y, STATUS_MAXSTEPS, n_rec
        if abs(dt) > abs(t1 - t):
            dt = t1 - t
        K[0, :] = k1
        for stage in range(1, 7):
            yt = y.copy()
            for prev in range(stage):
                a = _RK_A[stage, prev]
                if a != 0.0:
                    for n in range(14):
                        yt[n] += dt * a * K[prev, n]
            K[stage, :] = rhs_eval(rhs_id, t + _RK_C[stage] * dt, yt,
                                   eps, lam0, thr, fs, vs, mu)
        ynew = y.copy()
        for stage in range(7):
            b = _RK_B[stage]
            if b != 0.0:
                for n in range(14):
                    ynew[n] += dt * b * K[stage, n]
        errn = 0.0
        for n in range(14):
            e = 0.0
            for stage in range(7):
                w8 = _RK_E[stage]
                if w8 != 0.0:
                    e += w8 * K[stage, n]
            e *= dt
            sc = atol + rtol * max(abs(y[n]), abs(ynew[n]))
            q = e / sc
            errn += q * q
        errn = math.sqrt(errn / 14.0)
        if not math.isfinite(errn):
            return y, STATUS_NONFINITE, n_rec
        if errn <= 1.0:
            t = t + dt
            y = ynew
            k1 = K[6, :].copy()  # FSAL
            if record != 0 and n_rec < ts_out.shape[0]:
                ts_out[n_rec] = t
                ys_out[n_rec, :] = y
                n_rec += 1
            fac = 5.0 if errn == 0.0 else min(5.0, max(0.2, 0.9 * errn ** -0.2))
            dt *= fac
        else:
            dt *= max(0.2, 0.9 * errn ** -0.2)
        if abs(dt) < min_dt:
            return y, STATUS_STEP_UNDERFLOW, n_rec
        steps += 1
    return y, STATUS_OK, n_rec


@jitted
def cart_ctrl_rhs(t, y, t_nodes, tau_nodes, gam_nodes, thr, fs, vs, mu):
    """Cartesian [r, v, w] rates under a piecewise-linear control table.

    tau is thrust acceleration [canonical], gam its magnitude channel used for
    the mass-flow bookkeeping (w = ln m / m_ref).
    """
    n = t_nodes.shape[0]
    if t <= t_nodes[0]:
        idx = 0
        frac = 0.0
    elif t >= t_nodes[n - 1]:
        idx = n - 2
        frac = 1.0
    else:
        idx = 0
        for i in range(n - 1):
            if t_nodes[i + 1] >= t:
                idx = i
                break
        frac = (t - t_nodes[idx]) / (t_nodes[idx + 1] - t_nodes[idx])
    tau = np.empty(3)
    for i in range(3):
        tau[i] = tau_nodes[idx, i] + frac * (tau_nodes[idx + 1, i] - tau_nodes[idx, i])
    gam = gam_nodes[idx] + frac * (gam_nodes[idx + 1] - gam_nodes[idx])

    r3 = math.sqrt(y[0] * y[0] + y[1] * y[1] + y[2] * y[2])
    dy = np.zeros(7)
    dy[0] = y[3]
    dy[1] = y[4]
    dy[2] = y[5]
    coef = -mu / r3 ** 3
    dy[3] = coef * y[0] + tau[0]
    dy[4] = coef * y[1] + tau[1]
    dy[5] = coef * y[2] + tau[2]
    _tN, isp = thr_eval(r3, thr)
    if isp >= 1.0 and gam > 0.0:
        dy[6] = -gam / (isp * vs)
    return dy


@jitted
def integrate_cart_ctrl(y0, t0, t1, rtol, atol, t_nodes, tau_nodes, gam_nodes,
                        thr, fs, vs, mu, max_steps):
    """DP5(4) over the controlled Cartesian system; tracks min heliocentric r.

    Returns (y_final, status, min_radius).
    """
    y = y0.copy()
    t = t0
    span = t1 - t0
    r_min = math.sqrt(y[0] * y[0] + y[1] * y[1] + y[2] * y[2])
    if span == 0.0:
        return y, STATUS_OK, r_min
    direction = 1.0 if span > 0.0 else -1.0
    dt = span * 0.01
    min_dt = abs(span) * 1e-14
    K = np.zeros((7, 7))
    k1 = cart_ctrl_rhs(t, y, t_nodes, tau_nodes, gam_nodes, thr, fs, vs, mu)
    steps = 0
    while (t1 - t) * direction > 0.0:
        if steps >= max_steps:
            return y, STATUS_MAXSTEPS, r_min
        if abs(dt) > abs(t1 - t):
            dt = t1 - t
        K[0, :] = k1
        for stage in range(1, 7):
            yt = y.copy()
            for prev in range(stage):
                a = _RK_A[stage, prev]
                if a != 0.0:
                    for n in range(7):
                        yt[n] += dt * a * K[prev, n]
            K[stage, :] = cart_ctrl_rhs(t + _RK_C[stage] * dt, yt, t_nodes,
                                        tau_nodes, gam_nodes, thr, fs, vs, mu)
        ynew = y.copy()
        for stage in range(7):
            b = _RK_B[stage]
            if b != 0.0:
                for n in range(7):
                    ynew[n] += dt * b * K[stage, n]
        errn = 0.0
        for n in range(7):
            e = 0.0
            for stage in range(7):
                w8 = _RK_E[stage]
                if w8 != 0.0:
                    e += w8 * K[stage, n]
            e *= dt
            sc = atol + rtol * max(abs(y[n]), abs(ynew[n]))
            q = e / sc
            errn += q * q
        errn = math.sqrt(errn / 7.0)
        if not math.isfinite(errn):
            return y, STATUS_NONFINITE, r_min
        if errn <= 1.0:
            t = t + dt
            y = ynew
            k1 = K[6, :].copy()
            rr = math.sqrt(y[0] * y[0] + y[1] * y[1] + y[2] * y[2])
            if rr < r_min:
                r_min = rr
            fac = 5.0 if errn == 0.0 else min(5.0, max(0.2, 0.9 * errn ** -0.2))
            dt *= fac
        else:
            dt *= max(0.2, 0.9 * errn ** -0.2)
        if abs(dt) < min_dt:
            return y, STATUS_STEP_UNDERFLOW, r_min
        steps += 1
    return y, STATUS_OK, r_min

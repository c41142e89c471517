"""Pontryagin single-shooting solver for fuel- and time-optimal transfers.

State is kept in modified equinoctial elements; the throttle is smoothed by
the log barrier u - eps*ln(u(1-u)) and continued down an epsilon schedule
until the profile is effectively bang-bang.  Boundary states are fixed (the
departure velocity is Earth's heliocentric velocity; launch-velocity
optimization lives in the direct and surrogate pipelines).  All internal
arithmetic is canonical (AU, mu=1, mass normalized by the wet mass).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import _kernels as K
from .constants import AU_KM, DAY_S, TU_S, VU_KMS, isp_to_vex_canon, newton_to_canon
from .dynamics import ControlSample, MEEState, cart_to_mee, CartesianState, \
    elements_to_mee
from .ephemeris import KeplerianElements, eccentric_to_true, propagate, \
    solve_kepler, true_to_eccentric
from .scp import TransferProblem
from .thruster import ThrusterMode, kernel_params

TWO_PI = 2.0 * math.pi


class Objective(str, Enum):
    FUEL = "fuel"
    TIME = "time"


@dataclass
class CostateVector:
    """Initial costates (6 MEE + mass) and the cost multiplier, nondimensional."""
    lam_s: np.ndarray          # (7,)
    lam0: float

    def __post_init__(self):
        self.lam_s = np.asarray(self.lam_s, dtype=float)
        if self.lam_s.shape != (7,):
            raise ValueError("lam_s must have 7 components (6 MEE + mass)")

    def normalized(self) -> "CostateVector":
        n = math.sqrt(float(self.lam_s @ self.lam_s) + self.lam0**2)
        return CostateVector(self.lam_s / n, self.lam0 / n)

    def norm(self) -> float:
        return math.sqrt(float(self.lam_s @ self.lam_s) + self.lam0**2)


@dataclass(frozen=True)
class HomotopySchedule:
    eps_values: tuple[float, ...] = (1.0, 0.3, 0.1, 0.03, 0.01, 3e-3, 1e-3, 3e-4, 1e-4)

    def __post_init__(self):
        vals = self.eps_values
        if not vals or any(v <= 0.0 or v > 1.0 for v in vals):
            raise ValueError("eps values must lie in (0, 1]")
        if any(b >= a for a, b in zip(vals, vals[1:])):
            raise ValueError("eps schedule must be strictly decreasing")
        if vals[-1] < 1e-5:
            raise ValueError("terminal eps below 1e-5 is numerically fragile")


@dataclass
class DenseTrajectory:
    """Step-endpoint samples of the converged state/costate history."""
    ts: np.ndarray             # canonical time
    ys: np.ndarray             # (n, 14) state+costate
    throttle: np.ndarray       # (n,)
    alpha: np.ndarray          # (n, 3) RTN thrust direction
    switching: np.ndarray      # (n,)
    hamiltonian: np.ndarray    # (n,)


@dataclass
class ShootingResult:
    costates0: CostateVector
    residual_norm: float
    converged: bool
    dv_mps: float
    final_mass_ratio: float
    eps_reached: float
    tf_days: float                      # solved flight time (time-optimal)
    trajectory: DenseTrajectory | None = None
    restarts_used: int = 0

    @property
    def dt_min_days(self) -> float:
        return self.tf_days


class _Setup:
    """Canonical problem context shared by the shooting functions."""

    def __init__(self, prob: TransferProblem, tf_ref_canon: float | None = None):
        if prob.thruster.mode not in (ThrusterMode.CONSTANT,
                                      ThrusterMode.VARIABLE_DISTANCE):
            raise ValueError("indirect solver supports constant or "
                             "variable-distance thruster modes")
        self.prob = prob
        self.thr = kernel_params(prob.thruster)
        self.fs = newton_to_canon(1.0, prob.m0)
        self.vs = isp_to_vex_canon(1.0)
        self.mu = 1.0
        r0, v0 = propagate(prob.depart_elements, prob.depart_epoch)
        mee0 = cart_to_mee(CartesianState(r0, v0, prob.m0))
        y0 = np.empty(7)
        y0[0] = mee0.p / AU_KM
        y0[1:5] = [mee0.f, mee0.g, mee0.h, mee0.k]
        y0[5] = mee0.L % TWO_PI
        y0[6] = 1.0
        self.y0 = y0
        self.tof = prob.tof_days * DAY_S / TU_S

        el = prob.target
        self.tgt_p = el.a * (1.0 - el.e**2) / AU_KM
        lon_peri = el.raan + el.argp
        ti = math.tan(el.i / 2.0)
        self.tgt_fghk = np.array([el.e * math.cos(lon_peri), el.e * math.sin(lon_peri),
                                  ti * math.cos(el.raan), ti * math.sin(el.raan)])
        self._el = el
        self._n_tgt = (el.a / AU_KM) ** -1.5
        self._m_dep = eccentric_to_true(0.0, 0.0)  # placeholder, set below
        m0_tgt = true_to_eccentric(el.nu, el.e)
        m0_tgt = m0_tgt - el.e * math.sin(m0_tgt)
        dt_canon = (prob.depart_epoch.mjd - el.epoch.mjd) * DAY_S / TU_S
        self._m_dep = m0_tgt + self._n_tgt * dt_canon
        self._lon = lon_peri

        n_dep = (mee0.p / AU_KM / (1.0 - mee0.f**2 - mee0.g**2)) ** -1.5
        dl_exp = 0.5 * (n_dep + self._n_tgt) * self.tof
        tf_ref = self.tof if tf_ref_canon is None else tf_ref_canon
        raw_ref = self._l_raw(tf_ref)
        princ = (raw_ref - y0[5]) % TWO_PI
        k_rev = max(0, round((dl_exp - princ) / TWO_PI))
        # constant offset making target L continuous in t and on the branch
        # selected by the expected transfer angle
        self._l_offset = (y0[5] + princ + TWO_PI * k_rev) - raw_ref
        self.rev_count = k_rev

    def _l_raw(self, t: float) -> float:
        """Unwrapped target true longitude at canonical time t past departure."""
        el = self._el
        ecc_anom = solve_kepler(self._m_dep + self._n_tgt * t, el.e)
        k2pi = math.floor(ecc_anom / TWO_PI)
        nu = eccentric_to_true(ecc_anom - k2pi * TWO_PI, el.e) % TWO_PI
        return self._lon + nu + k2pi * TWO_PI

    def target_state(self, t: float) -> np.ndarray:
        s = np.empty(6)
        s[0] = self.tgt_p
        s[1:5] = self.tgt_fghk
        s[5] = self._l_raw(t) + self._l_offset
        return s

    def integrate(self, lam: np.ndarray, eps: float, lam0: float, rhs_id: int,
                  tf: float, rtol: float, record: bool = False):
        y = np.concatenate([self.y0, lam])
        if record:
            cap = 60000
            ts = np.zeros(cap)
            ys = np.zeros((cap, 14))
            yf, status, n = K.integrate_adjoint(rhs_id, y, 0.0, tf, rtol, rtol,
                                                eps, lam0, self.thr, self.fs,
                                                self.vs, self.mu, 300000, ts, ys, 1)
            return yf, status, ts[:n], ys[:n]
        ts = np.zeros(2)
        ys = np.zeros((2, 14))
        yf, status, _n = K.integrate_adjoint(rhs_id, y, 0.0, tf, rtol, rtol,
                                             eps, lam0, self.thr, self.fs,
                                             self.vs, self.mu, 300000, ts, ys, 0)
        return yf, status, None, None


# ---------------------------------------------------------------------------
# Public control-law and costate-rate operations (SI-facing wrappers)
# ---------------------------------------------------------------------------

def fuel_control(state: MEEState, costate: CostateVector, eps: float,
                 model, m_ref: float | None = None) -> ControlSample:
    """Optimal thrust direction (RTN) and smoothed throttle at one point.

    The direction is the MEE primer vector -M'lam/|M'lam|; the throttle
    follows the log-barrier formula, strictly interior for eps > 0.  m_ref
    sets the canonical mass unit (defaults to the state's own mass).
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    m_ref = state.m if m_ref is None else m_ref
    y = _pack_canonical(state, costate, m_ref)
    thr = kernel_params(model)
    alpha, u, _sf = K.fuel_control(y, eps, costate.lam0, thr,
                                   newton_to_canon(1.0, m_ref),
                                   isp_to_vex_canon(1.0), 1.0)
    if float(np.linalg.norm(alpha)) == 0.0:
        # measure-zero primer singularity: direction is arbitrary
        alpha = np.array([1.0, 0.0, 0.0])
    return ControlSample(alpha, min(max(u, 0.0), 1.0))


def switching_function(state: MEEState, costate: CostateVector, model,
                       m_ref: float | None = None) -> float:
    m_ref = state.m if m_ref is None else m_ref
    y = _pack_canonical(state, costate, m_ref)
    thr = kernel_params(model)
    _alpha, _u, sf = K.fuel_control(y, 1e-3, costate.lam0, thr,
                                    newton_to_canon(1.0, m_ref),
                                    isp_to_vex_canon(1.0), 1.0)
    return sf


def costate_deriv(state: MEEState, costate: CostateVector,
                  ctrl: ControlSample, eps: float, model,
                  m_ref: float | None = None,
                  objective: Objective = Objective.FUEL) -> np.ndarray:
    """d/dt of the 7 costates in canonical-per-second units."""
    m_ref = state.m if m_ref is None else m_ref
    y = _pack_canonical(state, costate, m_ref)
    rhs_id = K.RHS_FUEL if objective == Objective.FUEL else K.RHS_TIME
    dy = K.rhs_eval(rhs_id, 0.0, y, eps, costate.lam0, kernel_params(model),
                    newton_to_canon(1.0, m_ref), isp_to_vex_canon(1.0), 1.0)
    return dy[7:14] / TU_S


def fuel_hamiltonian(state: MEEState, costate: CostateVector,
                     ctrl: ControlSample, eps: float, model,
                     m_ref: float | None = None) -> float:
    """Smoothed fuel Hamiltonian (nondimensional); oracle for gradient tests."""
    m_ref = state.m if m_ref is None else m_ref
    y = _pack_canonical(state, costate, m_ref)
    return K.hamiltonian_fuel(y, np.asarray(ctrl.alpha, dtype=float), ctrl.u,
                              eps, costate.lam0, kernel_params(model),
                              newton_to_canon(1.0, m_ref),
                              isp_to_vex_canon(1.0), 1.0)


def _pack_canonical(state: MEEState, costate: CostateVector, m_ref: float) -> np.ndarray:
    y = np.empty(14)
    y[0] = state.p / AU_KM
    y[1:6] = [state.f, state.g, state.h, state.k, state.L]
    y[6] = state.m / m_ref
    y[7:14] = costate.lam_s
    return y


# ---------------------------------------------------------------------------
# Shooting residuals
# ---------------------------------------------------------------------------

def shoot_fuel(z: np.ndarray, setup: _Setup, eps: float,
               rtol: float = 1e-11) -> np.ndarray:
    """Residuals [6 terminal MEE mismatches, lam_m(tf), |z| - 1]."""
    z = np.asarray(z, dtype=float)
    lam, lam0 = z[0:7], z[7]
    out = np.full(8, np.inf)
    if lam0 <= 0.0 or not np.all(np.isfinite(z)):
        return out
    yf, status, _ts, _ys = setup.integrate(lam, eps, lam0, K.RHS_FUEL,
                                           setup.tof, rtol)
    if status != K.STATUS_OK or not np.all(np.isfinite(yf)):
        return out
    out[0:6] = yf[0:6] - setup.target_state(setup.tof)
    out[6] = yf[13]
    out[7] = float(np.linalg.norm(z)) - 1.0
    return out


def shoot_time(z: np.ndarray, setup: _Setup, rtol: float = 1e-11) -> np.ndarray:
    """Residuals [6 mismatches vs the moving target, lam_m(tf),
    transversality H - lam_L*sqrt(mu p)/r^2, |lam| - 1]."""
    z = np.asarray(z, dtype=float)
    lam, lam0, tf = z[0:7], z[7], z[8]
    out = np.full(9, np.inf)
    if lam0 <= 0.0 or tf <= 0.0 or not np.all(np.isfinite(z)):
        return out
    yf, status, _ts, _ys = setup.integrate(lam, 0.0, lam0, K.RHS_TIME, tf, rtol)
    if status != K.STATUS_OK or not np.all(np.isfinite(yf)):
        return out
    out[0:6] = yf[0:6] - setup.target_state(tf)
    out[6] = yf[13]
    alpha, _u, _sf = K.fuel_control(yf, 1.0, lam0, setup.thr, setup.fs,
                                    setup.vs, setup.mu)
    H = K.hamiltonian_time(yf, alpha, lam0, setup.thr, setup.fs, setup.vs, setup.mu)
    p = yf[0]
    w = 1.0 + yf[1] * math.cos(yf[5]) + yf[2] * math.sin(yf[5])
    r = p / w
    out[7] = H - yf[12] * math.sqrt(setup.mu * p) / r**2
    out[8] = float(np.linalg.norm(z[0:8])) - 1.0
    return out


# ---------------------------------------------------------------------------
# Damped Newton (Levenberg-Marquardt) with central-difference Jacobians
# ---------------------------------------------------------------------------

def _lm_solve(resfun, z0: np.ndarray, tol: float, max_iter: int,
              fd_step: float = 1e-7):
    z = z0.copy()
    F = resfun(z)
    if not np.all(np.isfinite(F)):
        return z, F, False
    fnorm = float(np.linalg.norm(F))
    damp = 1e-4
    n = z.size
    for _ in range(max_iter):
        if fnorm < tol:
            return z, F, True
        J = np.empty((F.size, n))
        for j in range(n):
            h = fd_step * max(1.0, abs(z[j]))
            zp = z.copy()
            zp[j] += h
            zm = z.copy()
            zm[j] -= h
            Fp = resfun(zp)
            Fm = resfun(zm)
            if not (np.all(np.isfinite(Fp)) and np.all(np.isfinite(Fm))):
                return z, F, fnorm < tol
            J[:, j] = (Fp - Fm) / (2.0 * h)
        JtJ = J.T @ J
        JtF = J.T @ F
        improved = False
        for _ in range(10):
            try:
                delta = np.linalg.solve(JtJ + damp * np.diag(np.diag(JtJ) + 1e-12),
                                        -JtF)
            except np.linalg.LinAlgError:
                damp *= 10.0
                continue
            zc = z + delta
            Fc = resfun(zc)
            fc = float(np.linalg.norm(Fc)) if np.all(np.isfinite(Fc)) else math.inf
            if fc < fnorm:
                z, F, fnorm = zc, Fc, fc
                damp = max(damp / 3.0, 1e-12)
                improved = True
                break
            damp *= 10.0
            if damp > 1e10:
                break
        if not improved:
            return z, F, fnorm < tol
    return z, F, fnorm < tol


# ---------------------------------------------------------------------------
# Homotopy multistart driver
# ---------------------------------------------------------------------------

def _dense_result(setup: _Setup, z: np.ndarray, eps: float, rhs_id: int,
                  tf: float, rtol: float = 1e-11):
    lam, lam0 = z[0:7], z[7]
    yf, status, ts, ys = setup.integrate(lam, eps, lam0, rhs_id, tf, rtol,
                                         record=True)
    n = ts.size
    throttle = np.empty(n)
    alpha = np.empty((n, 3))
    switching = np.empty(n)
    ham = np.empty(n)
    accel = np.empty(n)
    for i in range(n):
        a, u, sf = K.fuel_control(ys[i], max(eps, 1e-12), lam0, setup.thr,
                                  setup.fs, setup.vs, setup.mu)
        if rhs_id == K.RHS_TIME:
            u = 1.0
            ham[i] = K.hamiltonian_time(ys[i], a, lam0, setup.thr, setup.fs,
                                        setup.vs, setup.mu)
        else:
            ham[i] = K.hamiltonian_fuel(ys[i], a, u, eps, lam0, setup.thr,
                                        setup.fs, setup.vs, setup.mu)
        throttle[i] = u
        alpha[i] = a
        switching[i] = sf
        w = 1.0 + ys[i, 1] * math.cos(ys[i, 5]) + ys[i, 2] * math.sin(ys[i, 5])
        tN, _isp = K.thr_eval(ys[i, 0] / w, setup.thr)
        accel[i] = tN * setup.fs * u / ys[i, 6]
    dv = float(np.trapezoid(accel, ts)) * VU_KMS * 1e3
    traj = DenseTrajectory(ts=ts, ys=ys, throttle=throttle, alpha=alpha,
                           switching=switching, hamiltonian=ham)
    return dv, float(yf[6]), traj


def _unit_sample(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.normal(size=n)
    return v / float(np.linalg.norm(v))


def solve_indirect(prob: TransferProblem, objective: Objective = Objective.FUEL,
                   schedule: HomotopySchedule = HomotopySchedule(),
                   restarts: int = 50, seed: int = 0,
                   warm_start: np.ndarray | None = None,
                   tf_guess_days: float | None = None,
                   dense_output: bool = True) -> ShootingResult:
    """Multistart homotopy shooting; deterministic for a given seed.

    Fuel-optimal: solve at the first eps from random unit-sphere costates,
    then continue down the schedule reusing each converged solution.
    Time-optimal: the flight time joins the unknowns; prob.tof_days (or
    tf_guess_days) seeds it.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(
        [seed, int(prob.depart_epoch.mjd * 4096) & 0x7FFFFFFF,
         int(prob.tof_days * 4096) & 0x7FFFFFFF]))

    if objective == Objective.TIME:
        return _solve_time(prob, rng, restarts, warm_start, tf_guess_days,
                           dense_output)
    setup = _Setup(prob)
    eps_list = schedule.eps_values
    best_res = math.inf
    best = None
    used = 0
    starts: list[np.ndarray] = []
    if warm_start is not None:
        starts.append(np.asarray(warm_start, dtype=float))
    else:
        # near-coast seed (tiny tilt keeps the primer Jacobian nonsingular);
        # exact for phantom rendezvous, decent for low-effort transfers
        coast = np.full(8, 1e-5)
        coast[7] = 1.0
        starts.append(coast / float(np.linalg.norm(coast)))
    while len(starts) < restarts + 1:
        z = _unit_sample(rng, 8)
        z[7] = abs(z[7]) + 0.05
        starts.append(z / float(np.linalg.norm(z)))

    for z0 in starts:
        used += 1
        z, F, ok = _lm_solve(lambda zz: shoot_fuel(zz, setup, eps_list[0], 1e-9),
                             z0, tol=3e-8, max_iter=60)
        if not ok:
            fn = float(np.linalg.norm(F))
            if fn < best_res:
                best_res, best = fn, (z, eps_list[0])
            continue
        failed = False
        for eps in eps_list[1:]:
            z_new, F, ok = _lm_solve(lambda zz: shoot_fuel(zz, setup, eps, 1e-9),
                                     z, tol=3e-8, max_iter=30)
            if not ok:
                # one perturbed retry before abandoning this start
                zp = z * (1.0 + 1e-4) + 1e-5
                zp /= float(np.linalg.norm(zp))
                z_new, F, ok = _lm_solve(
                    lambda zz: shoot_fuel(zz, setup, eps, 1e-9),
                    zp, tol=3e-8, max_iter=30)
            if not ok:
                failed = True
                break
            z = z_new
        if failed:
            fn = float(np.linalg.norm(F))
            if fn < best_res:
                best_res, best = fn, (z, eps)
            continue
        # polish at the terminal eps with tight integration
        z, F, ok = _lm_solve(lambda zz: shoot_fuel(zz, setup, eps_list[-1], 1e-11),
                             z, tol=1e-9, max_iter=45)
        fn = float(np.linalg.norm(F))
        if ok and fn < 1e-8:
            dv, mf, traj = (None, None, None)
            if dense_output:
                dv, mf, traj = _dense_result(setup, z, eps_list[-1], K.RHS_FUEL,
                                             setup.tof)
            else:
                yf, _st, _a, _b = setup.integrate(z[0:7], eps_list[-1], z[7],
                                                  K.RHS_FUEL, setup.tof, 1e-11)
                mf = float(yf[6])
                dv = prob.thruster.const_isp * 9.80665 * math.log(1.0 / mf) \
                    if prob.thruster.mode == ThrusterMode.CONSTANT else math.nan
            return ShootingResult(
                costates0=CostateVector(z[0:7].copy(), float(z[7])),
                residual_norm=fn, converged=True, dv_mps=dv,
                final_mass_ratio=mf, eps_reached=eps_list[-1],
                tf_days=prob.tof_days, trajectory=traj, restarts_used=used)
        if fn < best_res:
            best_res, best = fn, (z, eps_list[-1])

    z, eps = best if best is not None else (starts[0], eps_list[0])
    return ShootingResult(costates0=CostateVector(z[0:7].copy(), float(max(z[7], 1e-12))),
                          residual_norm=best_res, converged=False, dv_mps=math.nan,
                          final_mass_ratio=math.nan, eps_reached=eps,
                          tf_days=prob.tof_days, trajectory=None, restarts_used=used)


def _solve_time(prob: TransferProblem, rng: np.random.Generator, restarts: int,
                warm_start: np.ndarray | None, tf_guess_days: float | None,
                dense_output: bool) -> ShootingResult:
    tf_days = prob.tof_days if tf_guess_days is None else tf_guess_days
    tf0 = tf_days * DAY_S / TU_S
    setup = _Setup(prob, tf_ref_canon=tf0)
    best_res = math.inf
    best = None
    used = 0
    starts: list[np.ndarray] = []
    if warm_start is not None:
        starts.append(np.asarray(warm_start, dtype=float))
    while len(starts) < restarts:
        z = np.empty(9)
        z[0:8] = _unit_sample(rng, 8)
        z[7] = abs(z[7]) + 0.05
        z[0:8] /= float(np.linalg.norm(z[0:8]))
        z[8] = tf0 * rng.uniform(0.7, 1.3)
        starts.append(z)

    for z0 in starts:
        used += 1
        z, F, ok = _lm_solve(lambda zz: shoot_time(zz, setup, 1e-9), z0,
                             tol=3e-8, max_iter=70)
        if not ok:
            fn = float(np.linalg.norm(F))
            if fn < best_res:
                best_res, best = fn, z
            continue
        z, F, ok = _lm_solve(lambda zz: shoot_time(zz, setup, 1e-11), z,
                             tol=1e-9, max_iter=45)
        fn = float(np.linalg.norm(F))
        if ok and fn < 1e-8 and z[8] > 0.0:
            dv, mf, traj = (None, None, None)
            if dense_output:
                dv, mf, traj = _dense_result(setup, z, 0.0, K.RHS_TIME, z[8])
            else:
                yf, _st, _a, _b = setup.integrate(z[0:7], 0.0, z[7], K.RHS_TIME,
                                                  z[8], 1e-11)
                mf = float(yf[6])
                dv = math.nan
            return ShootingResult(
                costates0=CostateVector(z[0:7].copy(), float(z[7])),
                residual_norm=fn, converged=True, dv_mps=dv,
                final_mass_ratio=mf, eps_reached=0.0,
                tf_days=float(z[8] * TU_S / DAY_S), trajectory=traj,
                restarts_used=used)
        if fn < best_res:
            best_res, best = fn, z
    z = best if best is not None else starts[0]
    return ShootingResult(costates0=CostateVector(z[0:7].copy(), float(max(z[7], 1e-12))),
                          residual_norm=best_res, converged=False, dv_mps=math.nan,
                          final_mass_ratio=math.nan, eps_reached=0.0,
                          tf_days=float(max(z[8], 0.0) * TU_S / DAY_S),
                          trajectory=None, restarts_used=used)

"""Equations of motion, coordinate conversions, and the adaptive integrator.

Public API works in km / km/s / kg / seconds; heliocentric distances handed
to the thruster model are in AU.  Thrust direction conventions: inertial
frame for the Cartesian equations, RTN frame for the MEE equations (helpers
below convert between the two).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .constants import AU_KM, G0, MU_SUN
from .ephemeris import Epoch, KeplerianElements, cartesian_to_elements, \
    elements_to_cartesian, true_to_eccentric
from .thruster import ThrusterModel, isp_at, tmax_at


class ForbiddenThrustError(Exception):
    """Positive throttle requested where the engine must be off."""


class IntegrationError(Exception):
    """Step-size underflow or non-finite state (stiffness/singularity)."""


@dataclass
class CartesianState:
    r: np.ndarray   # km, shape (3,)
    v: np.ndarray   # km/s, shape (3,)
    m: float        # kg

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.m <= 0.0:
            raise ValueError("mass must be positive")
        if np.linalg.norm(self.r) == 0.0:
            raise ValueError("position magnitude must be positive")


@dataclass
class MEEState:
    p: float        # km
    f: float
    g: float
    h: float
    k: float
    L: float        # rad
    m: float        # kg

    def __post_init__(self):
        if self.p <= 0.0:
            raise ValueError("semi-latus rectum must be positive")
        if self.f**2 + self.g**2 >= 1.0:
            raise ValueError("state is not elliptic (f^2+g^2 >= 1)")
        if self.m <= 0.0:
            raise ValueError("mass must be positive")

    def spatial(self) -> np.ndarray:
        return np.array([self.p, self.f, self.g, self.h, self.k, self.L])


@dataclass
class ControlSample:
    alpha: np.ndarray   # unit thrust direction
    u: float            # throttle in [0, 1]

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        n = np.linalg.norm(self.alpha)
        if abs(n - 1.0) > 1e-12:
            if n == 0.0:
                raise ValueError("thrust direction must be a unit vector")
            self.alpha = self.alpha / n
        if not 0.0 <= self.u <= 1.0:
            raise ValueError(f"throttle must be in [0, 1], got {self.u}")


COAST = None  # sentinel meaning u = 0


def cart_deriv(s: CartesianState, ctrl: ControlSample | None,
               model: ThrusterModel, mu: float = MU_SUN) -> np.ndarray:
    """d/dt [r, v, m]; thrust direction in the inertial frame."""
    r_mag = float(np.linalg.norm(s.r))
    r_au = r_mag / AU_KM
    out = np.zeros(7)
    out[0:3] = s.v
    out[3:6] = -mu / r_mag**3 * s.r
    u = 0.0 if ctrl is None else ctrl.u
    if u > 0.0:
        isp = isp_at(r_au, model)
        if isp < 1.0:
            raise ForbiddenThrustError(
                f"throttle {u:g} requested at r = {r_au:.4f} AU where Isp < 1 s")
        tmax = tmax_at(r_au, model)
        out[3:6] += (tmax * u / s.m) * 1e-3 * ctrl.alpha          # km/s^2
        out[6] = -tmax * u / (isp * G0)                            # kg/s
    return out


def mee_deriv(s: MEEState, ctrl: ControlSample | None,
              model: ThrusterModel, mu: float = MU_SUN) -> np.ndarray:
    """d/dt [p, f, g, h, k, L, m]; thrust direction in the RTN frame."""
    w = 1.0 + s.f * math.cos(s.L) + s.g * math.sin(s.L)
    if w <= 0.0:
        raise ValueError("singular MEE state: 1 + f cosL + g sinL <= 0")
    sv = s.spatial()
    M, D = _kernels.mee_matrices(sv, mu)
    out = np.zeros(7)
    out[0:6] = D
    u = 0.0 if ctrl is None else ctrl.u
    if u > 0.0:
        r_au = (s.p / w) / AU_KM
        isp = isp_at(r_au, model)
        if isp < 1.0:
            raise ForbiddenThrustError(
                f"throttle {u:g} requested at r = {r_au:.4f} AU where Isp < 1 s")
        tmax = tmax_at(r_au, model)
        acc = tmax * u / s.m * 1e-3                                # km/s^2
        out[0:6] += M @ (acc * ctrl.alpha)
        out[6] = -tmax * u / (isp * G0)
    return out


def cart_to_mee(s: CartesianState, mu: float = MU_SUN) -> MEEState:
    el = cartesian_to_elements(s.r, s.v, Epoch(0.0), mu)
    return elements_to_mee(el, s.m)


def elements_to_mee(el: KeplerianElements, m: float) -> MEEState:
    p = el.a * (1.0 - el.e**2)
    lon_peri = el.raan + el.argp
    ti = math.tan(el.i / 2.0)
    return MEEState(p=p, f=el.e * math.cos(lon_peri), g=el.e * math.sin(lon_peri),
                    h=ti * math.cos(el.raan), k=ti * math.sin(el.raan),
                    L=lon_peri + el.nu, m=m)


def mee_to_cart(s: MEEState, mu: float = MU_SUN) -> CartesianState:
    rv = _kernels.mee_to_rv(s.spatial(), mu)
    return CartesianState(r=rv[0:3].copy(), v=rv[3:6].copy(), m=s.m)


def rtn_to_inertial(alpha_rtn: np.ndarray, r: np.ndarray, v: np.ndarray) -> np.ndarray:
    B = _kernels.rtn_basis(np.concatenate([r, v]))
    return B.T @ np.asarray(alpha_rtn, dtype=float)


def inertial_to_rtn(alpha_in: np.ndarray, r: np.ndarray, v: np.ndarray) -> np.ndarray:
    B = _kernels.rtn_basis(np.concatenate([r, v]))
    return B @ np.asarray(alpha_in, dtype=float)


class Trajectory:
    """Dense-output trajectory from :func:`integrate` (cubic Hermite)."""

    def __init__(self, ts: np.ndarray, ys: np.ndarray, ds: np.ndarray):
        self.ts = ts
        self.ys = ys
        self.ds = ds

    @property
    def t0(self) -> float:
        return float(self.ts[0])

    @property
    def t1(self) -> float:
        return float(self.ts[-1])

    @property
    def y_end(self) -> np.ndarray:
        return self.ys[-1].copy()

    def sample(self, t: float) -> np.ndarray:
        ts = self.ts
        if not (min(ts[0], ts[-1]) - 1e-9 <= t <= max(ts[0], ts[-1]) + 1e-9):
            raise ValueError(f"t={t} outside trajectory span [{ts[0]}, {ts[-1]}]")
        if ts[-1] >= ts[0]:
            i = int(np.searchsorted(ts, t, side="right")) - 1
        else:
            i = int(np.searchsorted(-ts, -t, side="right")) - 1
        i = max(0, min(i, len(ts) - 2))
        h = ts[i + 1] - ts[i]
        if h == 0.0:
            return self.ys[i].copy()
        x = (t - ts[i]) / h
        y0, y1 = self.ys[i], self.ys[i + 1]
        d0, d1 = self.ds[i] * h, self.ds[i + 1] * h
        h00 = (1 + 2 * x) * (1 - x) ** 2
        h10 = x * (1 - x) ** 2
        h01 = x * x * (3 - 2 * x)
        h11 = x * x * (x - 1)
        return h00 * y0 + h10 * d0 + h01 * y1 + h11 * d1


def integrate(deriv, s0: np.ndarray, t0: float, t1: float,
              tol: float = 1e-9, max_steps: int = 1_000_000) -> Trajectory:
    """Adaptive Dormand-Prince 5(4) with dense output over callable dynamics.

    ``deriv(t, y) -> dy`` may be any state dimension.  tol is applied as a
    mixed relative/absolute tolerance scaled by the running state magnitude.
    """
    if not 1e-14 <= tol <= 1e-6:
        raise ValueError(f"tol must be in [1e-14, 1e-6], got {tol}")
    y = np.asarray(s0, dtype=float).copy()
    ndim = y.shape[0]
    A, B, C, E = _kernels._RK_A, _kernels._RK_B, _kernels._RK_C, _kernels._RK_E
    scale_floor = tol * max(1.0, float(np.max(np.abs(y))))
    ts = [t0]
    ys = [y.copy()]
    k1 = np.asarray(deriv(t0, y), dtype=float)
    ds = [k1.copy()]
    if t1 == t0:
        return Trajectory(np.array(ts), np.array(ys), np.array(ds))
    direction = 1.0 if t1 > t0 else -1.0
    span = t1 - t0
    dt = span * 0.01
    min_dt = abs(span) * 1e-14
    t = t0
    K = np.zeros((7, ndim))
    steps = 0
    while (t1 - t) * direction > 0.0:
        if steps >= max_steps:
            raise IntegrationError(f"exceeded {max_steps} steps")
        if abs(dt) > abs(t1 - t):
            dt = t1 - t
        K[0] = k1
        for s in range(1, 7):
            yt = y + dt * (A[s, :s] @ K[:s])
            K[s] = deriv(t + C[s] * dt, yt)
        ynew = y + dt * (B @ K)
        err = dt * (E @ K)
        sc = scale_floor + tol * np.maximum(np.abs(y), np.abs(ynew))
        errn = float(np.sqrt(np.mean((err / sc) ** 2)))
        if not math.isfinite(errn):
            raise IntegrationError(f"non-finite state at t={t}")
        if errn <= 1.0:
            t += dt
            y = ynew
            k1 = K[6].copy()
            ts.append(t)
            ys.append(y.copy())
            ds.append(k1.copy())
            dt *= 5.0 if errn == 0.0 else min(5.0, max(0.2, 0.9 * errn ** -0.2))
        else:
            dt *= max(0.2, 0.9 * errn ** -0.2)
        if abs(dt) < min_dt:
            raise IntegrationError(f"step size underflow at t={t}")
        steps += 1
    return Trajectory(np.array(ts), np.array(ys), np.array(ds))


def export_trajectory_csv(path: str, ts: np.ndarray, states: np.ndarray,
                          controls: np.ndarray) -> None:
    """Write the trajectory interchange CSV.

    states rows: [x, y, z, vx, vy, vz, m] (km, km/s, kg); controls rows:
    [ux, uy, uz, throttle] with u the unit thrust direction.
    """
    header = "t_s,x_km,y_km,z_km,vx,vy,vz,m_kg,ux,uy,uz,throttle"
    data = np.column_stack([ts, states, controls])
    np.savetxt(path, data, delimiter=",", header=header, comments="",
               fmt="%.12e")

"""Two-body ephemeris: Kepler solver, element conversions, catalog handling.

Earth and the asteroid targets are propagated as Keplerian orbits from their
epoch osculating elements.  This is a documented model simplification: no
planetary perturbations and no external ephemeris kernels.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .constants import AU_KM, MU_SUN

TWO_PI = 2.0 * math.pi

_DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
DEFAULT_CATALOG = os.path.join(_DATA_DIR, "catalog.csv")


class KeplerError(Exception):
    """Kepler iteration failed to converge (pathological input)."""


class CatalogError(Exception):
    """Catalog file could not be parsed."""


@dataclass(frozen=True)
class Epoch:
    """A point in time as Modified Julian Date (TDB assumed uniform)."""

    mjd: float

    def __post_init__(self):
        if not math.isfinite(self.mjd):
            raise ValueError("epoch MJD must be finite")

    def add_days(self, days: float) -> "Epoch":
        return Epoch(self.mjd + days)

    @staticmethod
    def from_calendar(year: int, month: int, day: int, frac: float = 0.0) -> "Epoch":
        return Epoch(calendar_to_mjd(year, month, day) + frac)

    @staticmethod
    def parse(text: str) -> "Epoch":
        """Accept 'YYYY-MM-DD' or a bare MJD number."""
        text = text.strip()
        if "-" in text[1:]:
            parts = text.split("-")
            if len(parts) != 3:
                raise ValueError(f"cannot parse epoch {text!r}")
            return Epoch.from_calendar(int(parts[0]), int(parts[1]), int(parts[2]))
        return Epoch(float(text))


def calendar_to_mjd(year: int, month: int, day: int) -> float:
    """Gregorian calendar date to MJD (0h UT)."""
    y, m = year, month
    if m <= 2:
        y -= 1
        m += 12
    a = y // 100
    b = 2 - a + a // 4
    jd = math.floor(365.25 * (y + 4716)) + math.floor(30.6001 * (m + 1)) + day + b - 1524.5
    return jd - 2400000.5


def mjd_to_calendar(mjd: float) -> tuple[int, int, int]:
    """MJD to Gregorian (year, month, day); exact inverse on whole days."""
    jd = mjd + 2400000.5 + 0.5
    z = math.floor(jd)
    f = jd - z
    alpha = math.floor((z - 1867216.25) / 36524.25)
    a = z + 1 + alpha - math.floor(alpha / 4)
    b = a + 1524
    c = math.floor((b - 122.1) / 365.25)
    d = math.floor(365.25 * c)
    e = math.floor((b - d) / 30.6001)
    day = int(b - d - math.floor(30.6001 * e) + f)
    month = int(e - 1 if e < 14 else e - 13)
    year = int(c - 4716 if month > 2 else c - 4715)
    return year, month, day


def _wrap_two_pi(angle: float) -> float:
    a = math.fmod(angle, TWO_PI)
    return a + TWO_PI if a < 0.0 else a


@dataclass(frozen=True)
class KeplerianElements:
    """Elliptic osculating elements; angles in radians, a in km."""

    a: float
    e: float
    i: float
    raan: float
    argp: float
    nu: float
    epoch: Epoch

    def __post_init__(self):
        if not self.a > 0.0:
            raise ValueError(f"semi-major axis must be positive, got {self.a}")
        if not 0.0 <= self.e < 1.0:
            raise ValueError(f"eccentricity must be in [0, 1), got {self.e}")
        for name in ("i", "raan", "argp", "nu"):
            object.__setattr__(self, name, _wrap_two_pi(getattr(self, name)))

    @property
    def period_s(self) -> float:
        return TWO_PI * math.sqrt(self.a**3 / MU_SUN)

    @property
    def period_days(self) -> float:
        return self.period_s / 86400.0


def solve_kepler(mean_anom: float, e: float, tol: float = 1e-14, max_iter: int = 60) -> float:
    """Solve E - e*sin(E) = M for the eccentric anomaly.

    Newton iteration from E0 = M + e*sin(M) with a bisection safeguard on
    [Mr - e, Mr + e]; the returned E lives in the same 2*pi branch as M.
    """
    if not 0.0 <= e < 1.0:
        raise ValueError(f"eccentricity must be in [0, 1), got {e}")
    if not math.isfinite(mean_anom):
        raise ValueError("mean anomaly must be finite")

    k = math.floor(mean_anom / TWO_PI)
    m_red = mean_anom - k * TWO_PI
    lo, hi = m_red - e, m_red + e
    ecc_anom = m_red + e * math.sin(m_red)
    for _ in range(max_iter):
        f = ecc_anom - e * math.sin(ecc_anom) - m_red
        if abs(f) < tol:
            return ecc_anom + k * TWO_PI
        # keep the bisection bracket valid
        if f > 0.0:
            hi = ecc_anom
        else:
            lo = ecc_anom
        step = f / (1.0 - e * math.cos(ecc_anom))
        cand = ecc_anom - step
        if not lo < cand < hi:
            cand = 0.5 * (lo + hi)
        ecc_anom = cand
    f = ecc_anom - e * math.sin(ecc_anom) - m_red
    if abs(f) < 1e-13:
        return ecc_anom + k * TWO_PI
    raise KeplerError(f"no convergence for M={mean_anom}, e={e} (residual {f:.3e})")


def true_to_eccentric(nu: float, e: float) -> float:
    return math.atan2(math.sqrt(1.0 - e * e) * math.sin(nu), e + math.cos(nu))


def eccentric_to_true(ecc_anom: float, e: float) -> float:
    return math.atan2(math.sqrt(1.0 - e * e) * math.sin(ecc_anom),
                      math.cos(ecc_anom) - e)


def eccentric_to_mean(ecc_anom: float, e: float) -> float:
    return ecc_anom - e * math.sin(ecc_anom)


def elements_to_cartesian(el: KeplerianElements, mu: float = MU_SUN) -> tuple[np.ndarray, np.ndarray]:
    """Osculating elements to heliocentric (r [km], v [km/s])."""
    p = el.a * (1.0 - el.e**2)
    r_mag = p / (1.0 + el.e * math.cos(el.nu))
    # perifocal position/velocity
    cn, sn = math.cos(el.nu), math.sin(el.nu)
    r_pf = np.array([r_mag * cn, r_mag * sn, 0.0])
    vf = math.sqrt(mu / p)
    v_pf = np.array([-vf * sn, vf * (el.e + cn), 0.0])
    rot = _perifocal_to_inertial(el.i, el.raan, el.argp)
    return rot @ r_pf, rot @ v_pf


def _perifocal_to_inertial(inc: float, raan: float, argp: float) -> np.ndarray:
    co, so = math.cos(raan), math.sin(raan)
    ci, si = math.cos(inc), math.sin(inc)
    cw, sw = math.cos(argp), math.sin(argp)
    return np.array([
        [co * cw - so * sw * ci, -co * sw - so * cw * ci, so * si],
        [so * cw + co * sw * ci, -so * sw + co * cw * ci, -co * si],
        [sw * si, cw * si, ci],
    ])


def cartesian_to_elements(r: np.ndarray, v: np.ndarray, epoch: Epoch,
                          mu: float = MU_SUN) -> KeplerianElements:
    """Inverse of :func:`elements_to_cartesian` for elliptic orbits."""
    r = np.asarray(r, dtype=float)
    v = np.asarray(v, dtype=float)
    r_mag = float(np.linalg.norm(r))
    h_vec = np.cross(r, v)
    h = float(np.linalg.norm(h_vec))
    e_vec = np.cross(v, h_vec) / mu - r / r_mag
    e = float(np.linalg.norm(e_vec))
    energy = 0.5 * float(v @ v) - mu / r_mag
    if energy >= 0.0:
        raise ValueError("state is not elliptic")
    a = -mu / (2.0 * energy)
    inc = math.acos(max(-1.0, min(1.0, h_vec[2] / h)))
    n_vec = np.array([-h_vec[1], h_vec[0], 0.0])
    n = float(np.linalg.norm(n_vec))
    if n > 1e-12 * h:
        raan = math.atan2(n_vec[1], n_vec[0])
    else:
        raan = 0.0
        n_vec = np.array([1.0, 0.0, 0.0])
        n = 1.0
    if e > 1e-12:
        argp = math.atan2(float(np.dot(np.cross(n_vec, e_vec), h_vec)) / (n * h),
                          float(np.dot(n_vec, e_vec)) / n)
        nu = math.atan2(float(np.dot(np.cross(e_vec, r), h_vec)) / (e * h),
                        float(np.dot(e_vec, r)) / e)
    else:
        argp = 0.0
        nu = math.atan2(float(np.dot(np.cross(n_vec, r), h_vec)) / (n * h),
                        float(np.dot(n_vec, r)) / n)
    return KeplerianElements(a=a, e=e, i=inc, raan=raan, argp=argp, nu=nu, epoch=epoch)


def propagate(el: KeplerianElements, t: Epoch, mu: float = MU_SUN) -> tuple[np.ndarray, np.ndarray]:
    """Two-body state (r [km], v [km/s]) of ``el`` at epoch ``t``."""
    el_t = propagate_elements(el, t, mu)
    return elements_to_cartesian(el_t, mu)


def propagate_elements(el: KeplerianElements, t: Epoch, mu: float = MU_SUN) -> KeplerianElements:
    """Advance only the anomaly; all conic invariants are untouched."""
    dt = (t.mjd - el.epoch.mjd) * 86400.0
    n = math.sqrt(mu / el.a**3)
    m0 = eccentric_to_mean(true_to_eccentric(el.nu, el.e), el.e)
    ecc_anom = solve_kepler(m0 + n * dt, el.e)
    nu = eccentric_to_true(ecc_anom, el.e)
    return KeplerianElements(a=el.a, e=el.e, i=el.i, raan=el.raan,
                             argp=el.argp, nu=nu, epoch=t)


# Earth mean elements at J2000 (MJD 51544.5).  The catalog convention stores
# the argument of perihelion directly; the classic J2000 table lists the
# longitude of perihelion (102.94719 deg) and mean longitude (100.46435 deg),
# so argp = 102.94719 - raan and nu is recovered from M = 100.46435 - 102.94719.
_EARTH_RAAN_DEG = -11.26064
_EARTH_LON_PERI_DEG = 102.94719
_EARTH_MEAN_LON_DEG = 100.46435
_EARTH_E = 0.01671022


def _earth_elements() -> KeplerianElements:
    m0 = math.radians(_EARTH_MEAN_LON_DEG - _EARTH_LON_PERI_DEG)
    nu0 = eccentric_to_true(solve_kepler(m0, _EARTH_E), _EARTH_E)
    return KeplerianElements(
        a=1.00000011 * AU_KM,
        e=_EARTH_E,
        i=math.radians(0.00005),
        raan=math.radians(_EARTH_RAAN_DEG),
        argp=math.radians(_EARTH_LON_PERI_DEG - _EARTH_RAAN_DEG),
        nu=nu0,
        epoch=Epoch(51544.5),
    )


EARTH = _earth_elements()


class BodyCatalog:
    """Named collection of Keplerian element sets."""

    def __init__(self, entries: dict[str, KeplerianElements] | None = None):
        self.entries: dict[str, KeplerianElements] = dict(entries or {})

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def names(self) -> list[str]:
        return list(self.entries.keys())

    def get(self, name: str) -> KeplerianElements:
        try:
            return self.entries[name]
        except KeyError:
            raise KeyError(f"body {name!r} not in catalog (have: {', '.join(self.entries) or 'none'})")

    def add(self, name: str, el: KeplerianElements) -> None:
        if name in self.entries:
            raise ValueError(f"duplicate catalog entry {name!r}")
        self.entries[name] = el

    def state(self, name: str, t: Epoch, mu: float = MU_SUN) -> tuple[np.ndarray, np.ndarray]:
        return propagate(self.get(name), t, mu)


_CATALOG_HEADER = ["name", "epoch_mjd", "a_km", "e", "i_deg", "raan_deg", "argp_deg", "nu_deg"]


def load_catalog(path: str = DEFAULT_CATALOG) -> BodyCatalog:
    """Load a catalog CSV (angles in degrees on disk, radians in memory)."""
    cat = BodyCatalog()
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or all(not ln.strip() for ln in lines):
        return cat
    header = [c.strip() for c in lines[0].split(",")]
    if header != _CATALOG_HEADER:
        raise CatalogError(f"{path}:1: bad header {header}, expected {_CATALOG_HEADER}")
    for lineno, ln in enumerate(lines[1:], start=2):
        if not ln.strip():
            continue
        cells = [c.strip() for c in ln.split(",")]
        if len(cells) != len(_CATALOG_HEADER):
            raise CatalogError(f"{path}:{lineno}: expected {len(_CATALOG_HEADER)} fields, got {len(cells)}")
        name = cells[0]
        try:
            vals = [float(c) for c in cells[1:]]
        except ValueError as exc:
            raise CatalogError(f"{path}:{lineno}: {exc}") from None
        epoch_mjd, a_km, e, i_deg, raan_deg, argp_deg, nu_deg = vals
        try:
            el = KeplerianElements(a=a_km, e=e, i=math.radians(i_deg),
                                   raan=math.radians(raan_deg), argp=math.radians(argp_deg),
                                   nu=math.radians(nu_deg), epoch=Epoch(epoch_mjd))
            cat.add(name, el)
        except ValueError as exc:
            raise CatalogError(f"{path}:{lineno}: {exc}") from None
    return cat


def save_catalog(cat: BodyCatalog, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(_CATALOG_HEADER) + "\n")
        for name, el in cat.entries.items():
            fh.write(f"{name},{el.epoch.mjd:.6f},{el.a:.10e},{el.e:.9f},"
                     f"{math.degrees(el.i):.7f},{math.degrees(el.raan):.7f},"
                     f"{math.degrees(el.argp):.7f},{math.degrees(el.nu):.7f}\n")

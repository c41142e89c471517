"""Electric-propulsion model: solar power, max thrust and Isp vs distance.

Two equivalent parameterizations of the same engine are carried: polynomials
in input power (chained through the power-vs-distance curve) and direct
fourth-order polynomials in heliocentric distance.  The distance form is what
the trajectory solvers evaluate; the power form exists for cross-checks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class ThrusterMode(str, Enum):
    CONSTANT = "constant"
    VARIABLE_POWER = "variable_power"
    VARIABLE_DISTANCE = "variable_distance"


@dataclass(frozen=True)
class PolyModel:
    """Polynomial with plateau clamps outside [domain_lo, domain_hi].

    ``coeffs`` are ascending-order; inputs below domain_lo return below_value,
    inputs above domain_hi return above_value.
    """

    coeffs: tuple[float, ...]
    domain_lo: float
    domain_hi: float
    below_value: float
    above_value: float

    def raw(self, x: float) -> float:
        acc = 0.0
        for c in reversed(self.coeffs):
            acc = acc * x + c
        return acc

    def __call__(self, x: float) -> float:
        if x <= self.domain_lo:
            return self.below_value
        if x >= self.domain_hi:
            return self.above_value
        return self.raw(x)

    def check_plateau_continuity(self, rel_tol: float = 0.01,
                                 edges: tuple[str, ...] = ("lo", "hi")) -> None:
        """Raise if the polynomial does not meet its plateaus within rel_tol.

        The tolerance is relative to the larger plateau magnitude.  The thrust
        and Isp curves are checked at the lower edge only: the upper cutoff is
        an intentional discontinuity (engine shutdown below minimum power).
        """
        ref = max(abs(self.below_value), abs(self.above_value), 1e-30)
        pairs = {"lo": (self.domain_lo, self.below_value),
                 "hi": (self.domain_hi, self.above_value)}
        for key in edges:
            edge, plateau = pairs[key]
            if abs(self.raw(edge) - plateau) > rel_tol * ref:
                raise ValueError(
                    f"polynomial value {self.raw(edge):g} at {edge:g} is not within "
                    f"{rel_tol:.0%} of plateau {plateau:g}")

    def to_dict(self) -> dict:
        return {"coeffs": list(self.coeffs), "domain_lo": self.domain_lo,
                "domain_hi": self.domain_hi, "below_value": self.below_value,
                "above_value": self.above_value}

    @staticmethod
    def from_dict(d: dict) -> "PolyModel":
        return PolyModel(tuple(d["coeffs"]), d["domain_lo"], d["domain_hi"],
                         d["below_value"], d["above_value"])


# Distance beyond which the variable thruster produces nothing (input power
# below the 80 W minimum); distinct from the 1.15 AU mission path constraint.
R_PLATEAU_AU = 0.9525
R_CUTOFF_AU = 1.1467

TMAX_PLATEAU_N = 2.2e-3
ISP_PLATEAU_S = 3600.0


@dataclass(frozen=True)
class ThrusterModel:
    mode: ThrusterMode
    power_of_r: PolyModel      # W vs AU
    tmax_of_p: PolyModel       # microN vs W
    isp_of_p: PolyModel        # s vs W
    tmax_of_r: PolyModel       # N vs AU
    isp_of_r: PolyModel        # s vs AU
    const_tmax: float = TMAX_PLATEAU_N   # N
    const_isp: float = ISP_PLATEAU_S     # s
    p_min: float = 80.0        # W
    p_max: float = 130.0       # W

    def with_mode(self, mode: ThrusterMode) -> "ThrusterModel":
        return ThrusterModel(mode, self.power_of_r, self.tmax_of_p, self.isp_of_p,
                             self.tmax_of_r, self.isp_of_r, self.const_tmax,
                             self.const_isp, self.p_min, self.p_max)

    def with_constant(self, tmax_n: float, isp_s: float) -> "ThrusterModel":
        return ThrusterModel(ThrusterMode.CONSTANT, self.power_of_r, self.tmax_of_p,
                             self.isp_of_p, self.tmax_of_r, self.isp_of_r,
                             tmax_n, isp_s, self.p_min, self.p_max)

    def to_dict(self) -> dict:
        return {"mode": self.mode.value,
                "power_of_r": self.power_of_r.to_dict(),
                "tmax_of_p": self.tmax_of_p.to_dict(),
                "isp_of_p": self.isp_of_p.to_dict(),
                "tmax_of_r": self.tmax_of_r.to_dict(),
                "isp_of_r": self.isp_of_r.to_dict(),
                "const_tmax": self.const_tmax, "const_isp": self.const_isp,
                "p_min": self.p_min, "p_max": self.p_max}

    @staticmethod
    def from_dict(d: dict) -> "ThrusterModel":
        return ThrusterModel(ThrusterMode(d["mode"]),
                             PolyModel.from_dict(d["power_of_r"]),
                             PolyModel.from_dict(d["tmax_of_p"]),
                             PolyModel.from_dict(d["isp_of_p"]),
                             PolyModel.from_dict(d["tmax_of_r"]),
                             PolyModel.from_dict(d["isp_of_r"]),
                             d["const_tmax"], d["const_isp"], d["p_min"], d["p_max"])

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @staticmethod
    def load(path: str) -> "ThrusterModel":
        with open(path, "r", encoding="utf-8") as fh:
            return ThrusterModel.from_dict(json.load(fh))


def power_at(r: float, model: ThrusterModel) -> float:
    """Available input power [W] at heliocentric distance r [AU]."""
    if r <= 0.0:
        raise ValueError("distance must be positive")
    raw = model.power_of_r.raw(r)
    return min(max(raw, model.p_min), model.p_max)


def tmax_at(r: float, model: ThrusterModel) -> float:
    """Maximum thrust [N] at distance r [AU] for the model's mode."""
    if r <= 0.0:
        raise ValueError("distance must be positive")
    if model.mode == ThrusterMode.CONSTANT:
        return model.const_tmax
    if model.mode == ThrusterMode.VARIABLE_DISTANCE:
        return max(model.tmax_of_r(r), 0.0)
    # variable power: chain through P(r), engine off past the power cutoff
    if r >= model.tmax_of_r.domain_hi:
        return 0.0
    return max(model.tmax_of_p(power_at(r, model)) * 1e-6, 0.0)


def isp_at(r: float, model: ThrusterModel) -> float:
    """Specific impulse [s] at distance r [AU] for the model's mode."""
    if r <= 0.0:
        raise ValueError("distance must be positive")
    if model.mode == ThrusterMode.CONSTANT:
        return model.const_isp
    if model.mode == ThrusterMode.VARIABLE_DISTANCE:
        return max(model.isp_of_r(r), 0.0)
    if r >= model.isp_of_r.domain_hi:
        return 0.0
    return max(model.isp_of_p(power_at(r, model)), 0.0)


def thrust_allowed(r: float, model: ThrusterModel) -> bool:
    """Thrusting is forbidden wherever Isp < 1 s (mass flow would be singular)."""
    return isp_at(r, model) >= 1.0


def default_thruster(mode: ThrusterMode = ThrusterMode.VARIABLE_DISTANCE) -> ThrusterModel:
    """The bundled engine model (verified against its plateau values)."""
    power_of_r = PolyModel((1281.4, -2518.8, 1828.5, -475.80, 0.0),
                           domain_lo=R_PLATEAU_AU, domain_hi=R_CUTOFF_AU,
                           below_value=130.0, above_value=80.0)
    tmax_of_p = PolyModel((-1234.3, 26.498, 0.0, 0.0, 0.0),
                          domain_lo=80.0, domain_hi=130.0,
                          below_value=-1234.3 + 26.498 * 80.0,
                          above_value=-1234.3 + 26.498 * 130.0)
    isp_of_p = PolyModel((-5519.5, 225.44, -1.8554, 5.0836e-3, 0.0),
                         domain_lo=80.0, domain_hi=130.0,
                         below_value=np.polyval([5.0836e-3, -1.8554, 225.44, -5519.5], 80.0),
                         above_value=np.polyval([5.0836e-3, -1.8554, 225.44, -5519.5], 130.0))
    tmax_of_r = PolyModel((0.0327202372, -0.0667431624, 0.0484515930, -0.0126077484, 0.0),
                          domain_lo=R_PLATEAU_AU, domain_hi=R_CUTOFF_AU,
                          below_value=TMAX_PLATEAU_N, above_value=0.0)
    isp_of_r = PolyModel((3.1951149396e5, -1.1891014516e6, 1.6645687780e6,
                          -1.0253620793e6, 2.3398323687e5),
                         domain_lo=R_PLATEAU_AU, domain_hi=R_CUTOFF_AU,
                         below_value=ISP_PLATEAU_S, above_value=0.0)
    model = ThrusterModel(mode=mode, power_of_r=power_of_r, tmax_of_p=tmax_of_p,
                          isp_of_p=isp_of_p, tmax_of_r=tmax_of_r, isp_of_r=isp_of_r)
    tmax_of_r.check_plateau_continuity(edges=("lo",))
    isp_of_r.check_plateau_continuity(edges=("lo",))
    power_of_r.check_plateau_continuity()
    return model


# ---------------------------------------------------------------------------
# Flat parameter block consumed by the compiled dynamics kernels.  Only the
# constant and variable-distance modes appear inside solvers.
# ---------------------------------------------------------------------------

KERNEL_MODE_CONST = 0.0
KERNEL_MODE_VARDIST = 1.0


def kernel_params(model: ThrusterModel) -> np.ndarray:
    """Pack thruster data into the float64 layout used by the njit kernels.

    Layout: [mode, const_tmax_N, const_isp_s, cT0..cT4, cI0..cI4,
             r_plateau, r_cutoff, tmax_plateau_N, isp_plateau_s]
    """
    out = np.zeros(17)
    if model.mode == ThrusterMode.CONSTANT:
        out[0] = KERNEL_MODE_CONST
    elif model.mode == ThrusterMode.VARIABLE_DISTANCE:
        out[0] = KERNEL_MODE_VARDIST
    else:
        raise ValueError("solvers accept constant or variable-distance modes only")
    out[1] = model.const_tmax
    out[2] = model.const_isp
    out[3:8] = model.tmax_of_r.coeffs
    out[8:13] = model.isp_of_r.coeffs
    out[13] = model.tmax_of_r.domain_lo
    out[14] = model.tmax_of_r.domain_hi
    out[15] = model.tmax_of_r.below_value
    out[16] = model.isp_of_r.below_value
    return out

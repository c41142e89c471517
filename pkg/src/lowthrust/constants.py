"""Physical constants and the canonical unit system.

All public interfaces in this package speak SI-ish astrodynamics units
(km, km/s, kg, seconds, days, MJD).  Solvers work internally in canonical
heliocentric units: length in AU, time such that mu_sun = 1 (one time unit
is a year divided by 2*pi).  The conversion factors below are the single
source of truth for both systems.
"""

import math

# Sun gravitational parameter [km^3/s^2]
MU_SUN = 1.32712440018e11

# Astronomical unit [km]
AU_KM = 1.495978707e8

# Standard gravity [m/s^2]
G0 = 9.80665

DAY_S = 86400.0

# Canonical units: DU = 1 AU, mu = 1  =>  TU = sqrt(AU^3 / mu_sun) seconds.
TU_S = math.sqrt(AU_KM**3 / MU_SUN)          # ~5.0226757e6 s (~58.13 days)
TU_DAY = TU_S / DAY_S
VU_KMS = AU_KM / TU_S                        # ~29.7847 km/s
ACC_KMS2 = VU_KMS / TU_S                     # canonical acceleration [km/s^2]
ACC_MS2 = ACC_KMS2 * 1e3                     # canonical acceleration [m/s^2]


def newton_to_canon(force_n: float, mass_kg: float) -> float:
    """Thrust [N] on a reference mass [kg] to canonical acceleration."""
    return (force_n / mass_kg) * 1e-3 / ACC_KMS2


def isp_to_vex_canon(isp_s: float) -> float:
    """Specific impulse [s] to canonical exhaust velocity Isp*g0."""
    return isp_s * G0 * 1e-3 / VU_KMS

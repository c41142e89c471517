"""Direct fuel-optimal transfer solver by sequential convex programming.

The nonconvex problem is discretized with Hermite-Simpson collocation,
linearized about a reference trajectory, and iterated with an L1 trust
region and penalized virtual controls until the converged solution passes a
nonlinear re-integration audit.  State is x = [r, v, w] with w = ln(m/m0);
controls are thrust acceleration tau and its magnitude channel Gamma, which
keeps the thrust cone convex.  Everything inside the solver is in canonical
units (AU, mu=1, mass/m0).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
import scipy.sparse as sp

from . import socp
from ._kernels import integrate_cart_ctrl, thr_eval, STATUS_OK
from .constants import AU_KM, DAY_S, TU_S, VU_KMS, newton_to_canon, isp_to_vex_canon
from .ephemeris import EARTH, Epoch, KeplerianElements, propagate
from .thruster import ThrusterModel, ThrusterMode, default_thruster, kernel_params


class TransferStatus(str, Enum):
    CONVERGED = "converged"
    INFEASIBLE = "infeasible"
    MAX_ITER = "max_iter"


@dataclass(frozen=True)
class TransferProblem:
    depart_epoch: Epoch
    tof_days: float
    target: KeplerianElements
    thruster: ThrusterModel = field(default_factory=default_thruster)
    m0: float = 26.5                 # kg
    prop_budget: float = 2.0         # kg
    vinf_max: float = 4.0            # km/s
    path_floor_au: float | None = 0.8
    engine_cutoff_au: float | None = 1.15
    depart_elements: KeplerianElements = EARTH

    def __post_init__(self):
        if self.tof_days <= 0.0:
            raise ValueError("time of flight must be positive")
        if not self.prop_budget < self.m0:
            raise ValueError("propellant budget must be below the wet mass")

    @property
    def arrive_epoch(self) -> Epoch:
        return self.depart_epoch.add_days(self.tof_days)

    def boundary_states_canon(self):
        """(r_i, v_i, r_f, v_f) in canonical units; v_i excludes v-infinity."""
        r0, v0 = propagate(self.depart_elements, self.depart_epoch)
        rf, vf = propagate(self.target, self.arrive_epoch)
        return (r0 / AU_KM, v0 / VU_KMS, rf / AU_KM, vf / VU_KMS)

    def without_constraints(self) -> "TransferProblem":
        return replace(self, path_floor_au=None, engine_cutoff_au=None)


@dataclass
class DiscreteTrajectory:
    """Node arrays in canonical units: times, states [r, v, w], controls [tau, Gamma]."""
    ts: np.ndarray          # (N,)
    x: np.ndarray           # (N, 7)
    u: np.ndarray           # (N, 4)
    vinf: np.ndarray = field(default_factory=lambda: np.zeros(3))  # canonical

    @property
    def n_nodes(self) -> int:
        return self.ts.size

    def copy(self) -> "DiscreteTrajectory":
        return DiscreteTrajectory(self.ts.copy(), self.x.copy(), self.u.copy(),
                                  self.vinf.copy())

    def resampled(self, new_tof_canon: float) -> "DiscreteTrajectory":
        """Linear time-scaling of the profile onto a new flight time."""
        scale = new_tof_canon / self.ts[-1]
        return DiscreteTrajectory(self.ts * scale, self.x.copy(), self.u.copy(),
                                  self.vinf.copy())


@dataclass(frozen=True)
class SCPConfig:
    n_nodes: int = 60
    trust_radius: float = 0.7        # per-node L1 radius, nondimensional
    lambda1: float = 1e4             # thrust-bound slack weight
    lambda2: float = 1e4             # virtual-control weight
    tol_dyn: float = 1e-6            # max nonlinear defect component
    tol_cost: float = 1e-6           # relative penalized-cost change
    max_scp_iter: int = 40

    def __post_init__(self):
        for name in ("n_nodes", "trust_radius", "lambda1", "lambda2",
                     "tol_dyn", "tol_cost", "max_scp_iter"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class SCPSolution:
    traj: DiscreteTrajectory
    dv_mps: float
    final_mass_kg: float
    vinf_kms: np.ndarray
    status: TransferStatus
    slack_norm: float
    defect_max: float
    audit_pos_err_km: float
    audit_vel_err_mps: float
    iterations: int
    penalized_cost: list = field(default_factory=list)
    discrete_converged: bool = False
    min_radius_au: float = float("nan")

    @property
    def converged(self) -> bool:
        return self.status == TransferStatus.CONVERGED

    def summary(self) -> dict:
        return {"dv_mps": self.dv_mps, "final_mass_kg": self.final_mass_kg,
                "status": self.status.value, "iterations": self.iterations,
                "slack_norm": self.slack_norm,
                "vinf_kms": list(self.vinf_kms),
                "audit_pos_err_km": self.audit_pos_err_km,
                "audit_vel_err_mps": self.audit_vel_err_mps}


# ---------------------------------------------------------------------------
# Dynamics in SCP state space (canonical): f(x, u), A = df/dx, B = df/du
# ---------------------------------------------------------------------------

def _vex_canon(r_au: float, model: ThrusterModel) -> float:
    from .thruster import isp_at
    return isp_to_vex_canon(isp_at(r_au, model))


def _tmax_acc_canon(r_au: float, model: ThrusterModel, m0: float) -> float:
    from .thruster import tmax_at
    return newton_to_canon(tmax_at(r_au, model), m0)


# canonical exhaust velocity at the 1 s Isp cutoff below which thrust
# (and hence mass flow) is forbidden
_VEX_MIN = isp_to_vex_canon(1.0)


def eval_f(x: np.ndarray, u: np.ndarray, model: ThrusterModel) -> np.ndarray:
    """Canonical dynamics [v, -r/r^3 + tau, -Gamma/vex(r)] (mu = 1)."""
    r = x[0:3]
    rn = float(np.linalg.norm(r))
    out = np.empty(7)
    out[0:3] = x[3:6]
    out[3:6] = -r / rn**3 + u[0:3]
    vex = _vex_canon(rn, model)
    out[6] = -u[3] / vex if vex >= _VEX_MIN else 0.0
    return out


def linearize(x: np.ndarray, u: np.ndarray, model: ThrusterModel):
    """(f, A, B) of the SCP dynamics at a node (canonical units)."""
    r = x[0:3]
    rn = float(np.linalg.norm(r))
    f = eval_f(x, u, model)
    A = np.zeros((7, 7))
    A[0:3, 3:6] = np.eye(3)
    A[3:6, 0:3] = 3.0 * np.outer(r, r) / rn**5 - np.eye(3) / rn**3
    B = np.zeros((7, 4))
    B[3:6, 0:3] = np.eye(3)
    vex = _vex_canon(rn, model)
    if vex >= _VEX_MIN:
        B[6, 3] = -1.0 / vex
        if model.mode == ThrusterMode.VARIABLE_DISTANCE and u[3] > 0.0:
            # d(wdot)/dr through Isp(r): +Gamma * vex'(r)/vex^2 along r-hat
            lo, hi = model.isp_of_r.domain_lo, model.isp_of_r.domain_hi
            if lo < rn < hi:
                dcoef = np.polynomial.polynomial.polyval(
                    rn, np.polynomial.polynomial.polyder(
                        np.array(model.isp_of_r.coeffs)))
                dvex = isp_to_vex_canon(float(dcoef))
                A[6, 0:3] = u[3] * dvex / vex**2 * (r / rn)
    return f, A, B


def coast_blend_guess(prob: TransferProblem, n_nodes: int = 60) -> DiscreteTrajectory:
    """Blend of the ballistic departure and (back-propagated) arrival orbits.

    Follows real orbital motion at both ends, so it is exact for phantom
    rendezvous and sweeps plausible multi-revolution arcs; used as the
    fallback when the cubic shape guess stalls.
    """
    from .ephemeris import cartesian_to_elements, propagate as _prop
    r0, v0 = _prop(prob.depart_elements, prob.depart_epoch)
    rf, vf = _prop(prob.target, prob.arrive_epoch)
    el0 = cartesian_to_elements(r0, v0, prob.depart_epoch)
    el1 = cartesian_to_elements(rf, vf, prob.arrive_epoch)
    T = prob.tof_days * DAY_S / TU_S
    ts = np.linspace(0.0, T, n_nodes)
    x = np.zeros((n_nodes, 7))
    u = np.zeros((n_nodes, 4))
    m_ratio_end = (prob.m0 - 0.5 * prob.prop_budget) / prob.m0
    for i, t in enumerate(ts):
        s = t / T if T > 0 else 0.0
        ep = prob.depart_epoch.add_days(s * prob.tof_days)
        ra, va = _prop(el0, ep)
        rb, vb = _prop(el1, ep)
        ra, va = ra / AU_KM, va / VU_KMS
        rb, vb = rb / AU_KM, vb / VU_KMS
        sig = s * s * (3.0 - 2.0 * s)
        dsig = 6.0 * s * (1.0 - s) / T
        d2sig = (6.0 - 12.0 * s) / T**2
        x[i, 0:3] = (1.0 - sig) * ra + sig * rb
        x[i, 3:6] = (1.0 - sig) * va + sig * vb + dsig * (rb - ra)
        x[i, 6] = math.log(1.0 + (m_ratio_end - 1.0) * s)
        aa = -ra / float(np.linalg.norm(ra))**3
        ab = -rb / float(np.linalg.norm(rb))**3
        acc = (1.0 - sig) * aa + sig * ab + 2.0 * dsig * (vb - va) + d2sig * (rb - ra)
        rn = float(np.linalg.norm(x[i, 0:3]))
        tau = acc + x[i, 0:3] / rn**3
        cap = _tmax_acc_canon(rn, prob.thruster, prob.m0) * math.exp(-x[i, 6])
        nt = float(np.linalg.norm(tau))
        if nt > cap:
            tau *= cap / nt if nt > 0.0 else 0.0
        u[i, 0:3] = tau
        u[i, 3] = float(np.linalg.norm(tau))
    return DiscreteTrajectory(ts, x, u)


def initial_guess_cubic(prob: TransferProblem, n_nodes: int = 60) -> DiscreteTrajectory:
    """Shape-based cubic guess matching boundary positions and velocities."""
    r0, v0, rf, vf = prob.boundary_states_canon()
    T = prob.tof_days * DAY_S / TU_S
    ts = np.linspace(0.0, T, n_nodes)
    # Hermite cubic per axis: r(0)=r0, r'(0)=v0, r(T)=rf, r'(T)=vf
    x = np.zeros((n_nodes, 7))
    u = np.zeros((n_nodes, 4))
    m_ratio_end = (prob.m0 - 0.5 * prob.prop_budget) / prob.m0
    for i, t in enumerate(ts):
        s = t / T
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        x[i, 0:3] = h00 * r0 + h10 * T * v0 + h01 * rf + h11 * T * vf
        dh00 = 6 * s * (s - 1)
        dh10 = (1 - s) * (1 - 3 * s)
        dh01 = -dh00
        dh11 = s * (3 * s - 2)
        x[i, 3:6] = (dh00 * r0 + dh10 * T * v0 + dh01 * rf + dh11 * T * vf) / T
        x[i, 6] = math.log(1.0 + (m_ratio_end - 1.0) * s)
        # inverse dynamics: tau = r'' + r/|r|^3, clipped to the local bound
        acc = (12 * s - 6) / T**2 * r0 + (6 * s - 4) / T * v0 \
            + (6 - 12 * s) / T**2 * rf + (6 * s - 2) / T * vf
        rn = float(np.linalg.norm(x[i, 0:3]))
        tau = acc + x[i, 0:3] / rn**3
        cap = _tmax_acc_canon(rn, prob.thruster, prob.m0) * math.exp(-x[i, 6])
        nt = float(np.linalg.norm(tau))
        if nt > cap:
            tau *= cap / nt if nt > 0.0 else 0.0
        u[i, 0:3] = tau
        u[i, 3] = float(np.linalg.norm(tau))
    return DiscreteTrajectory(ts, x, u)


# ---------------------------------------------------------------------------
# Subproblem assembly
# ---------------------------------------------------------------------------

class _VarMap:
    """Variable layout for the standard-form cone program.

    States enter through trust-region splitting x = x_ref + dp - dm with
    dp, dm nonnegative, which keeps the subproblem small: the only free
    variables are the three launch-velocity components.
    """

    def __init__(self, N: int, use_vinf_cone: bool, n_path: int):
        self.N = N
        self.vinf = 0
        n_free = 3
        nn = 0
        self.dp = n_free + nn; nn += 7 * N
        self.dm = n_free + nn; nn += 7 * N
        self.eta = n_free + nn; nn += N
        self.nu_p = n_free + nn; nn += 7 * (N - 1)
        self.nu_m = n_free + nn; nn += 7 * (N - 1)
        self.tr_s = n_free + nn; nn += N
        self.gam_s = n_free + nn; nn += N
        self.w_lo_s = n_free + nn; nn += N
        self.w_hi_s = n_free + nn; nn += N
        self.path_s = n_free + nn; nn += n_path
        self.n_free = n_free
        self.n_nonneg = nn
        self.ctrl_cone = n_free + nn     # N cones of dim 4: (Gamma, tau)
        socs = [4] * N
        self.vinf_cone = self.ctrl_cone + 4 * N
        if use_vinf_cone:
            socs.append(4)
        self.socs = tuple(socs)
        self.use_vinf_cone = use_vinf_cone
        self.total = n_free + nn + sum(socs)

    def ctrl(self, k: int) -> int:
        return self.ctrl_cone + 4 * k


class _Triplets:
    def __init__(self):
        self.rows = []
        self.cols = []
        self.vals = []
        self.rhs = []
        self.nrow = 0

    def new_rows(self, rvals) -> int:
        rvals = np.atleast_1d(rvals)
        start = self.nrow
        self.nrow += rvals.size
        self.rhs.extend(rvals)
        return start

    def add(self, r, c, v):
        self.rows.append(np.array([r], dtype=np.int64))
        self.cols.append(np.array([c], dtype=np.int64))
        self.vals.append(np.array([float(v)]))

    def add_block(self, r0: int, c0: int, blk: np.ndarray):
        blk = np.atleast_2d(blk)
        nr, nc = blk.shape
        rr, cc = np.meshgrid(np.arange(nr), np.arange(nc), indexing="ij")
        self.rows.append((r0 + rr).ravel())
        self.cols.append((c0 + cc).ravel())
        self.vals.append(blk.ravel())

    def add_diag(self, r0: int, c0: int, dvals: np.ndarray):
        dvals = np.atleast_1d(dvals)
        n = dvals.size
        self.rows.append(r0 + np.arange(n))
        self.cols.append(c0 + np.arange(n))
        self.vals.append(dvals.astype(float))

    def matrix(self, ncol: int) -> tuple[sp.csc_matrix, np.ndarray]:
        rows = np.concatenate(self.rows)
        cols = np.concatenate(self.cols)
        vals = np.concatenate(self.vals)
        keep = vals != 0.0
        A = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])),
                          shape=(self.nrow, ncol)).tocsc()
        return A, np.array(self.rhs)


def assemble_subproblem(ref: DiscreteTrajectory, prob: TransferProblem,
                        cfg: SCPConfig, trust_radius: float) -> tuple:
    """Build the convex subproblem about ``ref``.

    Returns (ConeProgram, varmap).  Constraint blocks: Hermite-Simpson
    linearized defects with split virtual control, per-node control cone
    ||tau|| <= Gamma, the first-order mass-expanded thrust bound with
    penalized slack, the per-node L1 trust region (via the dp/dm split),
    boundary rows with the launch velocity cone, w box bounds with the
    propellant floor, and (optionally) the linearized solar-distance floor
    and the engine-off region.
    """
    N = ref.n_nodes
    model = prob.thruster
    r0, v0, rf, vf = prob.boundary_states_canon()
    use_vinf = prob.vinf_max > 1e-12
    vinf_cap = prob.vinf_max / VU_KMS

    floor = prob.path_floor_au
    cutoff = prob.engine_cutoff_au
    rn_ref = np.linalg.norm(ref.x[:, 0:3], axis=1)
    path_nodes = list(range(N)) if floor is not None else []
    forbid = set(k for k in range(N)
                 if (cutoff is not None and rn_ref[k] > cutoff)
                 or _vex_canon(rn_ref[k], model) < _VEX_MIN)
    vm = _VarMap(N, use_vinf, len(path_nodes))

    fs = np.zeros((N, 7))
    As = np.zeros((N, 7, 7))
    Bs = np.zeros((N, 7, 4))
    for k in range(N):
        fs[k], As[k], Bs[k] = linearize(ref.x[k], ref.u[k], model)

    T = _Triplets()

    def add_state_block(r_start: int, k: int, blk: np.ndarray):
        T.add_block(r_start, vm.dp + 7 * k, blk)
        T.add_block(r_start, vm.dm + 7 * k, -blk)

    def add_ctrl_block(r_start: int, k: int, blk: np.ndarray):
        # control cone variable order is (Gamma, tau); blk columns are
        # (tau, Gamma) per the linearization layout
        T.add_block(r_start, vm.ctrl(k) + 1, blk[:, 0:3])
        T.add_block(r_start, vm.ctrl(k), blk[:, 3:4])

    # --- Hermite-Simpson defects with virtual control ----------------------
    eye7 = np.eye(7)
    for k in range(N - 1):
        h = ref.ts[k + 1] - ref.ts[k]
        xm = 0.5 * (ref.x[k] + ref.x[k + 1]) + (h / 8.0) * (fs[k] - fs[k + 1])
        um = 0.5 * (ref.u[k] + ref.u[k + 1])
        fm, Am, Bm = linearize(xm, um, model)
        Pk = -eye7 - (h / 6.0) * (As[k] + 4.0 * Am @ (0.5 * eye7 + (h / 8.0) * As[k]))
        Pk1 = eye7 - (h / 6.0) * (As[k + 1] + 4.0 * Am @ (0.5 * eye7 - (h / 8.0) * As[k + 1]))
        Qk = -(h / 6.0) * (Bs[k] + 4.0 * (Am @ ((h / 8.0) * Bs[k]) + 0.5 * Bm))
        Qk1 = -(h / 6.0) * (Bs[k + 1] + 4.0 * (Am @ (-(h / 8.0) * Bs[k + 1]) + 0.5 * Bm))
        defect_ref = ref.x[k + 1] - ref.x[k] - (h / 6.0) * (fs[k] + 4.0 * fm + fs[k + 1])
        rvec = Qk @ ref.u[k] + Qk1 @ ref.u[k + 1] - defect_ref
        r_start = T.new_rows(rvec)
        add_state_block(r_start, k, Pk)
        add_state_block(r_start, k + 1, Pk1)
        add_ctrl_block(r_start, k, Qk)
        add_ctrl_block(r_start, k + 1, Qk1)
        T.add_diag(r_start, vm.nu_p + 7 * k, -np.ones(7))
        T.add_diag(r_start, vm.nu_m + 7 * k, np.ones(7))

    # --- thrust magnitude bound (first-order in w) --------------------------
    for k in range(N):
        if k in forbid:
            r_start = T.new_rows(0.0)
            T.add(r_start, vm.ctrl(k), 1.0)   # Gamma_k = 0
            continue
        tcap = _tmax_acc_canon(rn_ref[k], model, prob.m0)
        coef = tcap * math.exp(-ref.x[k, 6])
        # Gamma <= coef*(1 - dw) + eta  ->  Gamma + coef*dw + s - eta = coef
        r_start = T.new_rows(coef)
        T.add(r_start, vm.ctrl(k), 1.0)
        T.add(r_start, vm.dp + 7 * k + 6, coef)
        T.add(r_start, vm.dm + 7 * k + 6, -coef)
        T.add(r_start, vm.gam_s + k, 1.0)
        T.add(r_start, vm.eta + k, -1.0)

    # --- trust region: sum_i (dp_i + dm_i) <= R per node ---------------------
    for k in range(N):
        r3 = T.new_rows(trust_radius)
        T.add_block(r3, vm.dp + 7 * k, np.ones((1, 7)))
        T.add_block(r3, vm.dm + 7 * k, np.ones((1, 7)))
        T.add(r3, vm.tr_s + k, 1.0)

    # --- boundary rows -------------------------------------------------------
    r_start = T.new_rows(r0 - ref.x[0, 0:3])
    add_state_block(r_start, 0, np.hstack([np.eye(3), np.zeros((3, 4))]))
    r_start = T.new_rows(v0 - ref.x[0, 3:6])
    add_state_block(r_start, 0, np.hstack([np.zeros((3, 3)), np.eye(3), np.zeros((3, 1))]))
    T.add_diag(r_start, vm.vinf, -np.ones(3))
    r_start = T.new_rows(-ref.x[0, 6])
    add_state_block(r_start, 0, np.concatenate([np.zeros(6), [1.0]])[None, :])
    r_start = T.new_rows(rf - ref.x[N - 1, 0:3])
    add_state_block(r_start, N - 1, np.hstack([np.eye(3), np.zeros((3, 4))]))
    r_start = T.new_rows(vf - ref.x[N - 1, 3:6])
    add_state_block(r_start, N - 1, np.hstack([np.zeros((3, 3)), np.eye(3), np.zeros((3, 1))]))
    if use_vinf:
        r_start = T.new_rows(vinf_cap)
        T.add(r_start, vm.vinf_cone, 1.0)
        r_start = T.new_rows(np.zeros(3))
        T.add_diag(r_start, vm.vinf_cone + 1, np.ones(3))
        T.add_diag(r_start, vm.vinf, -np.ones(3))
    else:
        r_start = T.new_rows(np.zeros(3))
        T.add_diag(r_start, vm.vinf, np.ones(3))

    # --- w box: ln((m0 - budget)/m0) <= w <= 0 -------------------------------
    w_floor = math.log((prob.m0 - prob.prop_budget) / prob.m0)
    for k in range(N):
        r_lo = T.new_rows(w_floor - ref.x[k, 6])
        T.add(r_lo, vm.dp + 7 * k + 6, 1.0)
        T.add(r_lo, vm.dm + 7 * k + 6, -1.0)
        T.add(r_lo, vm.w_lo_s + k, -1.0)
        r_hi = T.new_rows(-ref.x[k, 6])
        T.add(r_hi, vm.dp + 7 * k + 6, 1.0)
        T.add(r_hi, vm.dm + 7 * k + 6, -1.0)
        T.add(r_hi, vm.w_hi_s + k, 1.0)

    # --- linearized solar-distance floor -------------------------------------
    for j, k in enumerate(path_nodes):
        rhat = ref.x[k, 0:3] / rn_ref[k]
        r_p = T.new_rows(floor - rn_ref[k])
        T.add_block(r_p, vm.dp + 7 * k, rhat[None, :])
        T.add_block(r_p, vm.dm + 7 * k, -rhat[None, :])
        T.add(r_p, vm.path_s + j, -1.0)

    # --- objective (constant -w_ref(tf) added back by the caller) ------------
    c = np.zeros(vm.total)
    c[vm.dp + 7 * (N - 1) + 6] = -1.0
    c[vm.dm + 7 * (N - 1) + 6] = 1.0
    c[vm.eta:vm.eta + N] = cfg.lambda1
    c[vm.nu_p:vm.nu_p + 7 * (N - 1)] = cfg.lambda2
    c[vm.nu_m:vm.nu_m + 7 * (N - 1)] = cfg.lambda2

    A, rhs = T.matrix(vm.total)
    spec = socp.ConeSpec(vm.n_free, vm.n_nonneg, vm.socs)
    prog = socp.ConeProgram(c, A, rhs, spec)
    return prog, vm


def _extract(sol: socp.ConeSolution, vm: _VarMap, ref: DiscreteTrajectory) -> DiscreteTrajectory:
    N = vm.N
    dp = sol.x[vm.dp:vm.dp + 7 * N].reshape(N, 7)
    dm = sol.x[vm.dm:vm.dm + 7 * N].reshape(N, 7)
    x = ref.x + dp - dm
    u = np.empty((N, 4))
    for k in range(N):
        blk = sol.x[vm.ctrl(k):vm.ctrl(k) + 4]
        u[k, 0:3] = blk[1:4]
        u[k, 3] = blk[0]
    vinf = sol.x[vm.vinf:vm.vinf + 3].copy()
    return DiscreteTrajectory(ref.ts.copy(), x, u, vinf)


def nonlinear_defects(traj: DiscreteTrajectory, prob: TransferProblem) -> np.ndarray:
    """Hermite-Simpson residuals of the true dynamics at the node values."""
    N = traj.n_nodes
    model = prob.thruster
    out = np.zeros((N - 1, 7))
    fk = np.array([eval_f(traj.x[k], traj.u[k], model) for k in range(N)])
    for k in range(N - 1):
        h = traj.ts[k + 1] - traj.ts[k]
        xm = 0.5 * (traj.x[k] + traj.x[k + 1]) + (h / 8.0) * (fk[k] - fk[k + 1])
        um = 0.5 * (traj.u[k] + traj.u[k + 1])
        fm = eval_f(xm, um, model)
        out[k] = traj.x[k + 1] - traj.x[k] - (h / 6.0) * (fk[k] + 4.0 * fm + fk[k + 1])
    return out


def _bound_violation(traj: DiscreteTrajectory, prob: TransferProblem) -> float:
    """Summed true thrust-bound violations max(0, Gamma - Tmax(r) e^{-w})."""
    tot = 0.0
    for k in range(traj.n_nodes):
        rn = float(np.linalg.norm(traj.x[k, 0:3]))
        cap = _tmax_acc_canon(rn, prob.thruster, prob.m0) * math.exp(-traj.x[k, 6])
        tot += max(0.0, traj.u[k, 3] - cap)
    return tot


def penalized_cost(traj: DiscreteTrajectory, prob: TransferProblem,
                   cfg: SCPConfig) -> float:
    d = nonlinear_defects(traj, prob)
    return (-traj.x[-1, 6] + cfg.lambda1 * _bound_violation(traj, prob)
            + cfg.lambda2 * float(np.sum(np.abs(d))))


def reintegrate_audit(traj: DiscreteTrajectory, prob: TransferProblem):
    """Propagate the returned control profile through the true dynamics.

    Returns (pos_err_km, vel_err_mps, min_radius_au, end_state).
    """
    thr = kernel_params(prob.thruster)
    fsc = newton_to_canon(1.0, prob.m0)
    vsc = isp_to_vex_canon(1.0)
    y0 = traj.x[0].copy()
    tau = np.ascontiguousarray(traj.u[:, 0:3])
    gam = np.ascontiguousarray(traj.u[:, 3])
    yf, status, rmin = integrate_cart_ctrl(
        y0, traj.ts[0], traj.ts[-1], 1e-11, 1e-11, traj.ts, tau, gam,
        thr, fsc, vsc, 1.0, 400000)
    if status != STATUS_OK:
        return math.inf, math.inf, rmin, yf
    _r0, _v0, rf, vf = prob.boundary_states_canon()
    pos_err = float(np.linalg.norm(yf[0:3] - rf)) * AU_KM
    vel_err = float(np.linalg.norm(yf[3:6] - vf)) * VU_KMS * 1e3
    return pos_err, vel_err, rmin, yf


def trajectory_dv_mps(traj: DiscreteTrajectory) -> float:
    """Delta-v as the time integral of thrust acceleration magnitude."""
    gam = traj.u[:, 3]
    dv = float(np.trapezoid(gam, traj.ts))
    return dv * VU_KMS * 1e3


def resample_trajectory(traj: DiscreteTrajectory, n_nodes: int) -> DiscreteTrajectory:
    """Linear interpolation of states and controls onto a uniform mesh."""
    ts = np.linspace(traj.ts[0], traj.ts[-1], n_nodes)
    x = np.empty((n_nodes, 7))
    u = np.empty((n_nodes, 4))
    for i in range(7):
        x[:, i] = np.interp(ts, traj.ts, traj.x[:, i])
    for i in range(4):
        u[:, i] = np.interp(ts, traj.ts, traj.u[:, i])
    return DiscreteTrajectory(ts, x, u, traj.vinf.copy())


def solve_transfer(prob: TransferProblem, guess: DiscreteTrajectory | None = None,
                   cfg: SCPConfig = SCPConfig(), verbose: bool = False) -> SCPSolution:
    """Trust-region SCP iteration until the audit-verified solution converges.

    With no caller-supplied guess, the cubic shape guess is tried first and
    the ballistic coast-blend guess is used as a fallback.
    """
    if guess is not None:
        return _scp_iterate(prob, guess, cfg, verbose)
    sol = _scp_iterate(prob, initial_guess_cubic(prob, cfg.n_nodes), cfg, verbose)
    if sol.converged:
        return sol
    alt = _scp_iterate(prob, coast_blend_guess(prob, cfg.n_nodes), cfg, verbose)
    if alt.converged or (not sol.discrete_converged
                         and alt.slack_norm <= sol.slack_norm
                         and alt.dv_mps < sol.dv_mps):
        return alt
    return sol


def _engine_mask(traj: DiscreteTrajectory, prob: TransferProblem) -> np.ndarray:
    mask = np.ones(traj.n_nodes)
    for k in range(traj.n_nodes):
        rn = float(np.linalg.norm(traj.x[k, 0:3]))
        if _vex_canon(rn, prob.thruster) < _VEX_MIN:
            mask[k] = 0.0
        elif prob.engine_cutoff_au is not None and rn > prob.engine_cutoff_au:
            mask[k] = 0.0
    return mask


def _terminal_correction(traj: DiscreteTrajectory, prob: TransferProblem,
                         max_newton: int = 5) -> DiscreteTrajectory:
    """Differential correction of the control profile onto the true dynamics.

    The collocation solution carries O(h^4) truncation error when its control
    table is re-integrated through the continuous dynamics.  A six-parameter
    (constant + linear-in-time) thrust-acceleration adjustment, Newton-solved
    against the terminal miss, removes that error; the adjustment is orders
    of magnitude below the thrust scale so node defects and cost are
    unaffected at their tolerances.
    """
    _r0, _v0, rf, vf = prob.boundary_states_canon()
    target = np.concatenate([rf, vf])
    T = traj.ts[-1] - traj.ts[0]
    if T <= 0.0:
        return traj
    mask = _engine_mask(traj, prob)
    ramp = (traj.ts - traj.ts[0]) / T

    def applied(theta: np.ndarray) -> DiscreteTrajectory:
        tr = traj.copy()
        corr = theta[0:3][None, :] + np.outer(ramp, theta[3:6])
        tr.u[:, 0:3] = tr.u[:, 0:3] + corr * mask[:, None]
        tr.u[:, 3] = np.linalg.norm(tr.u[:, 0:3], axis=1)
        return tr

    def miss(theta: np.ndarray) -> np.ndarray:
        _pe, _ve, _rm, yf = reintegrate_audit(applied(theta), prob)
        return yf[0:6] - target

    theta = np.zeros(6)
    m0 = miss(theta)
    if not np.all(np.isfinite(m0)) or float(np.linalg.norm(m0)) > 0.05:
        return traj
    tol = 1e-8
    for _ in range(max_newton):
        if float(np.max(np.abs(m0))) < tol:
            break
        J = np.empty((6, 6))
        step = 1e-7
        for j in range(6):
            tp = theta.copy()
            tp[j] += step
            J[:, j] = (miss(tp) - m0) / step
        try:
            delta = np.linalg.solve(J, -m0)
        except np.linalg.LinAlgError:
            return traj
        cand = theta + delta
        mc = miss(cand)
        if not np.all(np.isfinite(mc)) or np.linalg.norm(mc) >= np.linalg.norm(m0):
            break
        theta, m0 = cand, mc
    return applied(theta)


def _scp_iterate(prob: TransferProblem, guess: DiscreteTrajectory,
                 cfg: SCPConfig = SCPConfig(), verbose: bool = False) -> SCPSolution:
    if guess.n_nodes != cfg.n_nodes:
        raise ValueError(f"guess has {guess.n_nodes} nodes, config wants {cfg.n_nodes}")
    ref = guess.copy()
    R = cfg.trust_radius
    J_ref = penalized_cost(ref, prob, cfg)
    history = [J_ref]
    status = TransferStatus.MAX_ITER
    slack_norm = math.inf
    accepted_costs = [J_ref]
    infeasible_votes = 0

    for it in range(cfg.max_scp_iter):
        prog, vm = assemble_subproblem(ref, prob, cfg, R)
        sol = socp.solve(prog, max_iter=100)
        if sol.status == socp.SolveStatus.PRIMAL_INFEASIBLE:
            infeasible_votes += 1
            if infeasible_votes >= 2:
                status = TransferStatus.INFEASIBLE
                break
            R *= 2.0
            continue
        if sol.status != socp.SolveStatus.OPTIMAL:
            R *= 0.5
            if R < 1e-7:
                break
            continue
        cand = _extract(sol, vm, ref)
        J_lin = float(sol.obj) - ref.x[-1, 6]
        J_cand = penalized_cost(cand, prob, cfg)
        pred = J_ref - J_lin
        act = J_ref - J_cand
        N = vm.N
        eta_sum = float(np.sum(sol.x[vm.eta:vm.eta + N]))
        nu_sum = float(np.sum(sol.x[vm.nu_p:vm.nu_p + 7 * (N - 1)])
                       + np.sum(sol.x[vm.nu_m:vm.nu_m + 7 * (N - 1)]))
        if verbose:
            print(f"scp {it:2d}: J_ref {J_ref:.8f} J_lin {J_lin:.8f} "
                  f"J_cand {J_cand:.8f} R {R:.2e} slacks {eta_sum + nu_sum:.2e}")
        if pred <= 1e-12:
            # linearization can no longer improve; accept if consistent
            ref = cand
            slack_norm = eta_sum + nu_sum
            accepted_costs.append(J_cand)
            history.append(J_cand)
            J_ref = min(J_ref, J_cand)
        elif act / pred >= 0.1:
            ref = cand
            J_ref = J_cand
            slack_norm = eta_sum + nu_sum
            accepted_costs.append(J_cand)
            history.append(J_cand)
            R = min(R * 1.5, 10.0)
        else:
            R *= 0.5
            if R < 1e-7:
                break
            continue
        defect_max = float(np.max(np.abs(nonlinear_defects(ref, prob))))
        cost_settled = (len(accepted_costs) >= 3 and
                        abs(accepted_costs[-1] - accepted_costs[-2])
                        <= cfg.tol_cost * max(1.0, abs(accepted_costs[-1])) and
                        abs(accepted_costs[-2] - accepted_costs[-3])
                        <= cfg.tol_cost * max(1.0, abs(accepted_costs[-2])))
        if defect_max < cfg.tol_dyn and slack_norm < 1e-6 and cost_settled:
            status = TransferStatus.CONVERGED
            break
        if cost_settled and slack_norm >= 1e-6 and len(accepted_costs) >= 5 and \
                abs(accepted_costs[-1] - accepted_costs[-5]) \
                <= cfg.tol_cost * max(1.0, abs(accepted_costs[-1])):
            break  # stalled at a penalized stationary point; not feasible

    discrete_ok = status == TransferStatus.CONVERGED
    if discrete_ok:
        ref = _terminal_correction(ref, prob)
    pos_err, vel_err, rmin, _yf = reintegrate_audit(ref, prob)
    if discrete_ok and (pos_err > 100.0 or vel_err > 1.0):
        status = TransferStatus.MAX_ITER
    final_mass = prob.m0 * math.exp(ref.x[-1, 6])
    return SCPSolution(
        traj=ref, dv_mps=trajectory_dv_mps(ref), final_mass_kg=final_mass,
        vinf_kms=ref.vinf * VU_KMS, status=status, slack_norm=slack_norm,
        defect_max=float(np.max(np.abs(nonlinear_defects(ref, prob)))),
        audit_pos_err_km=pos_err, audit_vel_err_mps=vel_err,
        iterations=it + 1, penalized_cost=history,
        discrete_converged=discrete_ok, min_radius_au=rmin)


def export_solution(sol: SCPSolution, prob: TransferProblem, csv_path: str,
                    json_path: str) -> None:
    """Trajectory CSV (dynamics interchange format) plus a JSON summary."""
    from .dynamics import export_trajectory_csv
    traj = sol.traj
    ts = traj.ts * TU_S
    states = np.empty((traj.n_nodes, 7))
    states[:, 0:3] = traj.x[:, 0:3] * AU_KM
    states[:, 3:6] = traj.x[:, 3:6] * VU_KMS
    states[:, 6] = prob.m0 * np.exp(traj.x[:, 6])
    controls = np.zeros((traj.n_nodes, 4))
    for k in range(traj.n_nodes):
        g = traj.u[k, 3]
        if g > 1e-14:
            controls[k, 0:3] = traj.u[k, 0:3] / max(g, 1e-30)
            cap = _tmax_acc_canon(float(np.linalg.norm(traj.x[k, 0:3])),
                                  prob.thruster, prob.m0) * math.exp(-traj.x[k, 6])
            controls[k, 3] = min(1.0, g / cap) if cap > 0.0 else 0.0
    export_trajectory_csv(csv_path, ts, states, controls)
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(sol.summary(), fh, indent=2)

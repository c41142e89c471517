"""Standalone second-order cone programming solver.

Solves problems in the standard conic form

    minimize    c'x
    subject to  A x = b
                x = (x_free, x_nonneg, x_soc_1, ..., x_soc_k)

with each SOC block constrained by ``head >= ||tail||_2``.  The algorithm is
a primal-dual interior point method on the homogeneous self-dual embedding
with Nesterov-Todd scaling and a Mehrotra predictor-corrector, which yields
reliable infeasibility certificates instead of stalls.  Internally the
problem is restated with all variables free and a slack vector s in the cone
(s = E x for the conic selector E), the form the embedding works on.

Dual variables returned satisfy  c + A'y - E'z = 0  with z in the dual cone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SolveStatus(str, Enum):
    OPTIMAL = "optimal"
    PRIMAL_INFEASIBLE = "primal_infeasible"
    DUAL_INFEASIBLE = "dual_infeasible"
    MAX_ITER = "max_iter"


class FactorizationError(Exception):
    """KKT factorization failed (rescale or regularize and retry)."""


@dataclass(frozen=True)
class ConeSpec:
    """Ordered variable partition: free block, nonnegative block, SOC blocks."""

    free: int
    nonneg: int
    soc: tuple[int, ...] = ()

    def __post_init__(self):
        if self.free < 0 or self.nonneg < 0:
            raise ValueError("block sizes must be nonnegative")
        for q in self.soc:
            if q < 2:
                raise ValueError(f"second-order cone must have dimension >= 2, got {q}")

    @property
    def cone_dim(self) -> int:
        return self.nonneg + sum(self.soc)

    @property
    def total(self) -> int:
        return self.free + self.cone_dim


@dataclass
class ConeProgram:
    c: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    cones: ConeSpec

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.A = sp.csc_matrix(self.A, dtype=float)
        if self.A.shape != (self.b.size, self.c.size):
            raise ValueError(f"A shape {self.A.shape} inconsistent with "
                             f"b ({self.b.size}) and c ({self.c.size})")
        if self.cones.total != self.c.size:
            raise ValueError(f"cone spec covers {self.cones.total} variables, "
                             f"program has {self.c.size}")

    def dump(self, path: str) -> None:
        """Plain-text capture for regression: header, then triplet sections."""
        A = self.A.tocoo()
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"socp {self.c.size} {self.b.size} {self.cones.free} "
                     f"{self.cones.nonneg} {len(self.cones.soc)}\n")
            fh.write(" ".join(str(q) for q in self.cones.soc) + "\n")
            fh.write(" ".join(f"{v:.17e}" for v in self.c) + "\n")
            fh.write(" ".join(f"{v:.17e}" for v in self.b) + "\n")
            fh.write(f"{A.nnz}\n")
            for i, j, v in zip(A.row, A.col, A.data):
                fh.write(f"{i} {j} {v:.17e}\n")

    @staticmethod
    def load(path: str) -> "ConeProgram":
        with open(path, "r", encoding="utf-8") as fh:
            head = fh.readline().split()
            if not head or head[0] != "socp":
                raise ValueError(f"{path}: not a cone program dump")
            n, m, nf, nl, nsoc = (int(v) for v in head[1:6])
            socs = tuple(int(v) for v in fh.readline().split())
            if len(socs) != nsoc:
                raise ValueError(f"{path}: expected {nsoc} cone sizes")
            c = np.array([float(v) for v in fh.readline().split()])
            b = np.array([float(v) for v in fh.readline().split()])
            nnz = int(fh.readline())
            rows = np.empty(nnz, dtype=np.int64)
            cols = np.empty(nnz, dtype=np.int64)
            vals = np.empty(nnz)
            for k in range(nnz):
                i, j, v = fh.readline().split()
                rows[k], cols[k], vals[k] = int(i), int(j), float(v)
            A = sp.coo_matrix((vals, (rows, cols)), shape=(m, n)).tocsc()
            return ConeProgram(c, A, b, ConeSpec(nf, nl, socs))


@dataclass
class ConeSolution:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    status: SolveStatus
    gap: float
    pres: float
    dres: float
    iterations: int
    obj: float = float("nan")

    @property
    def optimal(self) -> bool:
        return self.status == SolveStatus.OPTIMAL


# ---------------------------------------------------------------------------
# Jordan-algebra helpers over the composite cone (nonneg orthant + SOCs).
# Cone vectors are flat arrays; `dims` carries (nl, socs) offsets.
# ---------------------------------------------------------------------------

class _Cone:
    def __init__(self, nonneg: int, socs: tuple[int, ...]):
        self.l = nonneg
        self.socs = socs
        self.dim = nonneg + sum(socs)
        self.degree = nonneg + len(socs)
        self.e = np.zeros(self.dim)
        self.e[:nonneg] = 1.0
        off = nonneg
        self.offsets = []
        for q in socs:
            self.offsets.append(off)
            self.e[off] = 1.0
            off += q

    def margin(self, u: np.ndarray) -> float:
        """Smallest 'distance' to the cone boundary along e (negative outside)."""
        m = np.inf
        if self.l:
            m = min(m, float(np.min(u[:self.l])))
        for off, q in zip(self.offsets, self.socs):
            m = min(m, u[off] - float(np.linalg.norm(u[off + 1:off + q])))
        return m

    def inside(self, u: np.ndarray, tol: float = 0.0) -> bool:
        return self.margin(u) > tol

    def product(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Jordan product u o v."""
        out = np.empty(self.dim)
        out[:self.l] = u[:self.l] * v[:self.l]
        for off, q in zip(self.offsets, self.socs):
            u0, u1 = u[off], u[off + 1:off + q]
            v0, v1 = v[off], v[off + 1:off + q]
            out[off] = u0 * v0 + u1 @ v1
            out[off + 1:off + q] = u0 * v1 + v0 * u1
        return out

    def solve_product(self, lam: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Solve lam o x = v for x (arrow-matrix inverse per block)."""
        out = np.empty(self.dim)
        out[:self.l] = v[:self.l] / lam[:self.l]
        for off, q in zip(self.offsets, self.socs):
            l0, l1 = lam[off], lam[off + 1:off + q]
            v0, v1 = v[off], v[off + 1:off + q]
            den = l0 * l0 - l1 @ l1
            x0 = (l0 * v0 - l1 @ v1) / den
            out[off] = x0
            out[off + 1:off + q] = (v1 - x0 * l1) / l0
        return out

    def max_step(self, u: np.ndarray, du: np.ndarray) -> float:
        """Largest t with u + t*du in the (closed) cone; inf when unbounded."""
        t = np.inf
        if self.l:
            neg = du[:self.l] < 0.0
            if np.any(neg):
                t = min(t, float(np.min(-u[:self.l][neg] / du[:self.l][neg])))
        for off, q in zip(self.offsets, self.socs):
            u0, u1 = u[off], u[off + 1:off + q]
            d0, d1 = du[off], du[off + 1:off + q]
            # roots of (u0+t d0)^2 - |u1+t d1|^2 = 0
            a = d0 * d0 - d1 @ d1
            bq = 2.0 * (u0 * d0 - u1 @ d1)
            cq = u0 * u0 - u1 @ u1
            cand = np.inf
            if abs(a) < 1e-300:
                if bq < 0.0:
                    cand = -cq / bq
            else:
                disc = bq * bq - 4.0 * a * cq
                if disc >= 0.0:
                    sq = math.sqrt(disc)
                    for root in ((-bq - sq) / (2.0 * a), (-bq + sq) / (2.0 * a)):
                        if root > 0.0 and u0 + root * d0 >= -1e-300:
                            cand = min(cand, root)
                elif a < 0.0:
                    cand = 0.0  # should not happen from interior
            if d0 < 0.0:
                cand = min(cand, -u0 / d0)
            t = min(t, cand)
        return t


class _Scaling:
    """Nesterov-Todd scaling blocks: W z = W^{-1} s = lambda."""

    def __init__(self, cone: _Cone, s: np.ndarray, z: np.ndarray):
        self.cone = cone
        l = cone.l
        self.w_lp = np.sqrt(s[:l] / z[:l]) if l else np.zeros(0)
        self.lam = np.empty(cone.dim)
        self.lam[:l] = np.sqrt(s[:l] * z[:l])
        self.Wm = []      # per-SOC explicit W
        self.Wi = []      # per-SOC explicit W^{-1}
        self.W2 = []      # per-SOC explicit W^2
        self.W2i = []     # per-SOC explicit W^{-2} (exact Jordan inverse)
        for off, q in zip(cone.offsets, cone.socs):
            sb = s[off:off + q]
            zb = z[off:off + q]
            sres = sb[0] ** 2 - sb[1:] @ sb[1:]
            zres = zb[0] ** 2 - zb[1:] @ zb[1:]
            sbar = sb / math.sqrt(sres)
            zbar = zb / math.sqrt(zres)
            gamma = math.sqrt((1.0 + sbar @ zbar) / 2.0)
            wbar = (sbar + _jmul(zbar)) / (2.0 * gamma)
            eta = (sres / zres) ** 0.25
            # W = eta * (2 v v' - J) with v the Jordan square root of wbar
            v = wbar.copy()
            v[0] += 1.0
            v /= math.sqrt(2.0 * (wbar[0] + 1.0))
            J = -np.eye(q)
            J[0, 0] = 1.0
            Wm = eta * (2.0 * np.outer(v, v) - J)
            jv = _jmul(v)
            Wi = (2.0 * np.outer(jv, jv) - J) / eta
            W2 = eta * eta * (2.0 * np.outer(wbar, wbar) - J)
            jw = _jmul(wbar)
            W2i = (2.0 * np.outer(jw, jw) - J) / (eta * eta)
            self.Wm.append(Wm)
            self.Wi.append(Wi)
            self.W2.append(W2)
            self.W2i.append(W2i)
            self.lam[off:off + q] = Wm @ zb

    def mul_w(self, v: np.ndarray) -> np.ndarray:
        out = np.empty(self.cone.dim)
        l = self.cone.l
        out[:l] = self.w_lp * v[:l]
        for W, off, q in zip(self.Wm, self.cone.offsets, self.cone.socs):
            out[off:off + q] = W @ v[off:off + q]
        return out

    def mul_winv(self, v: np.ndarray) -> np.ndarray:
        out = np.empty(self.cone.dim)
        l = self.cone.l
        out[:l] = v[:l] / self.w_lp
        for Wi, off, q in zip(self.Wi, self.cone.offsets, self.cone.socs):
            out[off:off + q] = Wi @ v[off:off + q]
        return out

    def w2_matrix(self) -> sp.csc_matrix:
        l = self.cone.l
        blocks = []
        if l:
            blocks.append(sp.diags(self.w_lp ** 2))
        for W2 in self.W2:
            blocks.append(sp.csc_matrix(W2))
        if not blocks:
            return sp.csc_matrix((0, 0))
        return sp.block_diag(blocks, format="csc")


def _jmul(u: np.ndarray) -> np.ndarray:
    out = -u.copy()
    out[0] = u[0]
    return out


# ---------------------------------------------------------------------------
# Core HSDE interior-point loop on (x free; s = Ex in cone).
# ---------------------------------------------------------------------------

@dataclass
class _Work:
    """Internal ECOS-form problem: min c'x s.t. Ax=b, Ex - s = 0, s in K."""
    c: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    E: sp.csc_matrix
    cone: _Cone


class _KKT:
    """Quasi-definite 3x3 KKT system with a fixed symbolic pattern.

    K = [[reg*I, A', -E'], [A, -reg*I, 0], [-E, 0, -(W^2+reg*I)]]; only the
    W^2 block values change between interior-point iterations, so the COO
    index arrays are built once and refreshed in place.  Solves are refined
    against the unregularized operator applied matrix-free.
    """

    def __init__(self, w: _Work, reg: float = 1e-10):
        self.w = w
        self.reg = reg
        n = w.c.size
        p = w.b.size
        cone = w.cone
        m = cone.dim
        self.n, self.p, self.m = n, p, m
        nf = n - m                      # free variables precede cone variables
        A = w.A.tocoo()
        zrow = n + p                    # first cone row
        # constant entries: A, A', -E, -E', and the regularization diagonals
        cone_cols = nf + np.arange(m)
        rows = [A.row + n, A.col, np.arange(m) + zrow, cone_cols,
                np.arange(n), np.arange(n, n + p)]
        cols = [A.col, A.row + n, cone_cols, np.arange(m) + zrow,
                np.arange(n), np.arange(n, n + p)]
        vals = [A.data, A.data, -np.ones(m), -np.ones(m),
                np.full(n, reg), np.full(p, -reg)]
        self._n_const = sum(v.size for v in vals)
        # mutable -(W^2+reg) entries: LP diagonal then dense SOC blocks
        lp_idx = zrow + np.arange(cone.l)
        rows.append(lp_idx)
        cols.append(lp_idx)
        vals.append(np.zeros(cone.l))
        self._soc_slices = []
        pos = self._n_const + cone.l
        for off, q in zip(cone.offsets, cone.socs):
            base = zrow + off
            rr, cc = np.meshgrid(np.arange(q), np.arange(q), indexing="ij")
            rows.append((base + rr).ravel())
            cols.append((base + cc).ravel())
            vals.append(np.zeros(q * q))
            self._soc_slices.append((pos, q))
            pos += q * q
        self._rows = np.concatenate(rows)
        self._cols = np.concatenate(cols)
        self._vals = np.concatenate(vals)
        self._lp_slice = slice(self._n_const, self._n_const + cone.l)
        self._dim = n + p + m
        self.scal: _Scaling | None = None

    def factor(self, scal: _Scaling, stable: bool = False) -> None:
        self.scal = scal
        reg = self.reg
        self._vals[self._lp_slice] = -(scal.w_lp ** 2 + reg)
        for (pos, q), W2 in zip(self._soc_slices, scal.W2):
            blk = -(W2 + reg * np.eye(q))
            self._vals[pos:pos + q * q] = blk.ravel()
        K = sp.coo_matrix((self._vals, (self._rows, self._cols)),
                          shape=(self._dim, self._dim)).tocsc()
        self._K = K
        self._lu_stable = None
        # While the barrier parameter is large the system is mildly
        # conditioned and forced diagonal pivoting keeps the symmetric
        # fill-reducing ordering (~5x cheaper); the endgame needs partial
        # pivoting.  Iterative refinement plus a stable refactor in solve()
        # backstops the fast path.
        opts = {"SymmetricMode": True}
        if not stable:
            opts["DiagPivotThresh"] = 0.0
        try:
            self.lu = spla.splu(K, permc_spec="MMD_AT_PLUS_A", options=opts)
        except RuntimeError as exc:
            raise FactorizationError(str(exc)) from None
        if stable:
            self._lu_stable = self.lu

    def _apply_w2(self, v: np.ndarray) -> np.ndarray:
        scal = self.scal
        cone = self.w.cone
        out = np.empty(cone.dim)
        out[:cone.l] = scal.w_lp ** 2 * v[:cone.l]
        for W2, off, q in zip(scal.W2, cone.offsets, cone.socs):
            out[off:off + q] = W2 @ v[off:off + q]
        return out

    def _residual(self, r1, r2, r3, dx, dy, dz):
        w = self.w
        E = w.E
        res1 = r1 - (w.A.T @ dy - E.T @ dz)
        res2 = r2 - w.A @ dx
        res3 = r3 - (-E @ dx - self._apply_w2(dz))
        err = max(float(np.linalg.norm(res1)), float(np.linalg.norm(res2)),
                  float(np.linalg.norm(res3)))
        return res1, res2, res3, err

    def _refined_solve(self, lu, r1, r2, r3, refine):
        n, p = self.n, self.p
        sol = lu.solve(np.concatenate([r1, r2, r3]))
        dx, dy, dz = sol[:n], sol[n:n + p], sol[n + p:]
        scale = max(1.0, float(np.linalg.norm(r1)), float(np.linalg.norm(r2)),
                    float(np.linalg.norm(r3)))
        err = math.inf
        for _ in range(refine):
            res1, res2, res3, err = self._residual(r1, r2, r3, dx, dy, dz)
            if err < 1e-13 * scale:
                break
            corr = lu.solve(np.concatenate([res1, res2, res3]))
            dx = dx + corr[:n]
            dy = dy + corr[n:n + p]
            dz = dz + corr[n + p:]
        if err is math.inf or err >= 1e-13 * scale:
            _1, _2, _3, err = self._residual(r1, r2, r3, dx, dy, dz)
        return dx, dy, dz, err, scale

    def solve(self, r1: np.ndarray, r2: np.ndarray, r3: np.ndarray,
              refine: int = 4, tol_rel: float = 1e-12
              ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        dx, dy, dz, err, scale = self._refined_solve(self.lu, r1, r2, r3, refine)
        if err > tol_rel * scale or not math.isfinite(err):
            # static diagonal pivoting was too optimistic for this scaling
            if self._lu_stable is None:
                self._lu_stable = spla.splu(self._K, permc_spec="MMD_AT_PLUS_A",
                                            options={"SymmetricMode": True})
            dx2, dy2, dz2, err2, _s = self._refined_solve(
                self._lu_stable, r1, r2, r3, refine)
            if err2 < err:
                return dx2, dy2, dz2
        return dx, dy, dz


def _solve_embedded(w: _Work, max_iter: int, feastol: float, gaptol: float,
                    verbose: bool = False) -> tuple[str, dict]:
    """Interior-point loop on the homogeneous self-dual embedding.

    Residual conventions (all driven to zero; h = 0 in this embedding):
        rx = A'y - E'z + c*tau
        ry = A x - b*tau
        rz = s - E x
        rk = kappa + c'x + b'y
    The Newton step for targets (tx, ty, tz, tk) and complementarity targets
    (ds_t in the cone, dk_t scalar) reduces, after eliminating ds via
    ds = W(lam \\ ds_t) - W^2 dz, to two solves with the symmetric KKT matrix
    K = [[0, A', -E'], [A, 0, 0], [-E, 0, -W^2]] and a scalar equation for
    dtau.
    """
    cone = w.cone
    n, p = w.c.size, w.b.size
    c, b = w.c, w.b
    E = w.E
    kkt = _KKT(w)

    # initial point from the W=I KKT system, shifted into the cone interior
    ident = _Scaling.__new__(_Scaling)
    ident.cone = cone
    ident.w_lp = np.ones(cone.l)
    ident.lam = np.ones(cone.dim)
    ident.Wm = [np.eye(q) for q in cone.socs]
    ident.Wi = [np.eye(q) for q in cone.socs]
    ident.W2 = [np.eye(q) for q in cone.socs]
    ident.W2i = [np.eye(q) for q in cone.socs]
    kkt.factor(ident)
    x, y, zt = kkt.solve(np.zeros(n), b, np.zeros(cone.dim))
    s = -zt
    alpha_p = -cone.margin(s)
    if alpha_p >= 0.0:
        s = s + (1.0 + alpha_p) * cone.e
    _x1, _y1, z = kkt.solve(-c, np.zeros(p), np.zeros(cone.dim))
    alpha_d = -cone.margin(z)
    if alpha_d >= 0.0:
        z = z + (1.0 + alpha_d) * cone.e
    tau, kappa = 1.0, 1.0

    bnorm = 1.0 + float(np.linalg.norm(b))
    cnorm = 1.0 + float(np.linalg.norm(c))
    best = None

    for it in range(max_iter):
        rx = w.A.T @ y - E.T @ z + c * tau
        ry = w.A @ x - b * tau
        rz = s - E @ x
        rk = kappa + c @ x + b @ y
        mu = (s @ z + tau * kappa) / (cone.degree + 1)

        xs, ys, zs, ss = x / tau, y / tau, z / tau, s / tau
        pcost = c @ xs
        dcost = -(b @ ys)
        gap = ss @ zs
        relgap = gap / max(1.0, abs(pcost), abs(dcost))
        pres = max(float(np.linalg.norm(w.A @ xs - b)) / bnorm,
                   float(np.linalg.norm(E @ xs - ss)) / (1.0 + float(np.linalg.norm(ss))))
        dres = float(np.linalg.norm(w.A.T @ ys - E.T @ zs + c)) / cnorm
        stable_phase = max(pres, dres, relgap) < 1e-3
        lin_tol = 1e-12 if stable_phase else 1e-4
        if verbose:
            print(f"iter {it:3d}  pcost {pcost:+.6e}  gap {relgap:.2e}  "
                  f"pres {pres:.2e}  dres {dres:.2e}  tau {tau:.2e}  kap {kappa:.2e}")
        metrics = {"x": xs, "y": ys, "z": zs, "s": ss, "gap": relgap,
                   "pres": pres, "dres": dres, "it": it, "pcost": pcost}
        if best is None or max(pres, dres, relgap) < max(best["pres"], best["dres"], best["gap"]):
            best = metrics
        if pres < feastol and dres < feastol and relgap < gaptol:
            return "optimal", metrics

        # infeasibility certificates (normalized Farkas rays)
        denom = -(b @ y)
        if denom > feastol:
            yc, zc = y / denom, z / denom
            cert = float(np.linalg.norm(w.A.T @ yc - E.T @ zc))
            scale_ = 1.0 + float(np.linalg.norm(yc)) + float(np.linalg.norm(zc))
            if cert / scale_ < feastol and cone.margin(zc) > -feastol:
                return "primal_infeasible", {"y": yc, "z": zc, "it": it}
        if c @ x < -feastol:
            scale_ = -(c @ x)
            xc, sc_ = x / scale_, s / scale_
            cert = max(float(np.linalg.norm(w.A @ xc)),
                       float(np.linalg.norm(E @ xc - sc_)))
            if cert / (1.0 + float(np.linalg.norm(xc))) < feastol \
                    and cone.margin(sc_) > -feastol:
                return "dual_infeasible", {"x": xc, "s": sc_, "it": it}

        scal = _Scaling(cone, s, z)
        lam = scal.lam
        try:
            kkt.factor(scal, stable=stable_phase)
        except FactorizationError:
            return "max_iter", best

        u1 = kkt.solve(-c, b, np.zeros(cone.dim), tol_rel=lin_tol)
        cu1 = c @ u1[0] + b @ u1[1]

        def newton(sig, comp_corr, kap_corr):
            f = 1.0 - sig
            tx, ty, tz, tk = -f * rx, -f * ry, -f * rz, -f * rk
            ds_t = sig * mu * cone.e - cone.product(lam, lam)
            if comp_corr is not None:
                ds_t = ds_t - comp_corr
            dk_t = sig * mu - tau * kappa - kap_corr
            wlds = scal.mul_w(cone.solve_product(lam, ds_t))
            u2 = kkt.solve(tx, ty, tz - wlds, tol_rel=lin_tol)
            num = tk - dk_t / tau - (c @ u2[0] + b @ u2[1])
            den = cu1 - kappa / tau
            dtau = num / den if den != 0.0 else 0.0
            dx = u2[0] + dtau * u1[0]
            dy = u2[1] + dtau * u1[1]
            dz = u2[2] + dtau * u1[2]
            ds = wlds - scal.mul_w(scal.mul_w(dz))
            dkap = (dk_t - kappa * dtau) / tau
            return dx, dy, dz, ds, dtau, dkap

        dxa, dya, dza, dsa, dtaua, dkapa = newton(0.0, None, 0.0)
        alpha = min(cone.max_step(s, dsa), cone.max_step(z, dza))
        if dtaua < 0.0:
            alpha = min(alpha, -tau / dtaua)
        if dkapa < 0.0:
            alpha = min(alpha, -kappa / dkapa)
        alpha = min(alpha, 1.0)
        mu_aff = ((s + alpha * dsa) @ (z + alpha * dza)
                  + (tau + alpha * dtaua) * (kappa + alpha * dkapa)) / (cone.degree + 1)
        sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3

        comp_corr = cone.product(scal.mul_winv(dsa), scal.mul_w(dza))
        kap_corr = dtaua * dkapa
        dx, dy, dz, ds, dtau, dkap = newton(sigma, comp_corr, kap_corr)

        alpha = min(cone.max_step(s, ds), cone.max_step(z, dz))
        if dtau < 0.0:
            alpha = min(alpha, -tau / dtau)
        if dkap < 0.0:
            alpha = min(alpha, -kappa / dkap)
        alpha = min(0.99 * alpha, 1.0)
        if alpha <= 1e-9:
            return "max_iter", best

        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * ds
        tau += alpha * dtau
        kappa += alpha * dkap

    return "max_iter", best


# ---------------------------------------------------------------------------
# Public solve with Ruiz equilibration and the spec-form mapping.
# ---------------------------------------------------------------------------

def _equilibrate(prog: ConeProgram, passes: int = 10):
    """Ruiz row/col scaling; conic columns share a block-uniform scale."""
    A = prog.A.tocsr().copy()
    m, n = A.shape
    row = np.ones(m)
    col = np.ones(n)
    cones = prog.cones
    groups = []          # index groups forced to share one scale
    off = cones.free + cones.nonneg
    for q in cones.soc:
        groups.append(np.arange(off, off + q))
        off += q
    for _ in range(passes):
        if A.nnz == 0:
            break
        Aabs = abs(A)
        rmax = np.asarray(Aabs.max(axis=1).todense()).ravel()
        rmax[rmax == 0.0] = 1.0
        dr = 1.0 / np.sqrt(rmax)
        A = sp.diags(dr) @ A
        row *= dr
        cmax = np.asarray(abs(A).max(axis=0).todense()).ravel()
        cmax[cmax == 0.0] = 1.0
        for g in groups:
            cmax[g] = cmax[g].max()
        dc = 1.0 / np.sqrt(cmax)
        A = A @ sp.diags(dc)
        col *= dc
    return A.tocsc(), row, col


def solve(prog: ConeProgram, max_iter: int = 100, feastol: float = 1e-8,
          gaptol: float = 1e-8, equilibrate: bool = True,
          verbose: bool = False) -> ConeSolution:
    """Solve the cone program; statuses carry verifiable certificates.

    On PRIMAL_INFEASIBLE the returned (y, z) is a Farkas ray:
    A'y - E'z = 0, z in K*, b'y < 0.  On DUAL_INFEASIBLE x is an unbounded
    improving ray: Ax = 0, Ex in K, c'x < 0.
    """
    cones = prog.cones
    n = prog.c.size
    # drop all-zero equality rows (with consistency check)
    A = prog.A.tocsr()
    rownnz = np.diff(A.indptr)
    keep = rownnz > 0
    if not np.all(keep):
        bad = ~keep & (np.abs(prog.b) > 0.0)
        if np.any(bad):
            ray = np.zeros(prog.b.size)
            idx = int(np.nonzero(bad)[0][0])
            ray[idx] = -math.copysign(1.0, prog.b[idx])
            return ConeSolution(np.full(n, np.nan), ray, np.zeros(cones.cone_dim),
                                SolveStatus.PRIMAL_INFEASIBLE, np.inf, np.inf,
                                np.inf, 0)
        A = A[keep]
        b = prog.b[keep]
    else:
        b = prog.b
    work_prog = ConeProgram(prog.c, A.tocsc(), b, cones)

    if equilibrate and A.nnz:
        Ascaled, row, col = _equilibrate(work_prog)
    else:
        Ascaled, row, col = work_prog.A, np.ones(b.size), np.ones(n)
    cs = work_prog.c * col
    bs = work_prog.b * row
    cone = _Cone(cones.nonneg, cones.soc)
    E = sp.hstack([sp.csc_matrix((cone.dim, cones.free)),
                   sp.eye(cone.dim, format="csc")], format="csc") \
        if cones.free else sp.eye(cone.dim, format="csc")
    if cone.dim == 0:
        raise ValueError("program has no conic variables; add a nonneg block")
    w = _Work(c=cs, A=Ascaled.tocsc(), b=bs, E=E, cone=cone)
    status, info = _solve_embedded(w, max_iter, feastol, gaptol, verbose)

    cd = col[cones.free:]
    if status == "optimal":
        x = info["x"] * col
        y = info["y"] * row
        z = info["z"] / cd
        y_full = y if np.all(keep) else _expand(y, keep, prog.b.size)
        return ConeSolution(x, y_full, z, SolveStatus.OPTIMAL, info["gap"],
                            info["pres"], info["dres"], info["it"],
                            obj=float(prog.c @ x))
    if status == "primal_infeasible":
        y = info["y"] * row
        z = info["z"] / cd
        y_full = y if np.all(keep) else _expand(y, keep, prog.b.size)
        return ConeSolution(np.full(n, np.nan), y_full, z,
                            SolveStatus.PRIMAL_INFEASIBLE, np.inf, np.inf, np.inf,
                            info["it"])
    if status == "dual_infeasible":
        x = info["x"] * col
        return ConeSolution(x, np.zeros(prog.b.size), np.zeros(cone.dim),
                            SolveStatus.DUAL_INFEASIBLE, np.inf, np.inf, np.inf,
                            info["it"])
    x = info["x"] * col if info else np.full(n, np.nan)
    y = info["y"] * row if info else np.zeros(b.size)
    z = info["z"] / cd if info else np.zeros(cone.dim)
    y_full = y if np.all(keep) else _expand(y, keep, prog.b.size)
    return ConeSolution(x, y_full, z, SolveStatus.MAX_ITER,
                        info.get("gap", np.inf) if info else np.inf,
                        info.get("pres", np.inf) if info else np.inf,
                        info.get("dres", np.inf) if info else np.inf,
                        info["it"] if info else max_iter,
                        obj=float(prog.c @ x) if info else float("nan"))


def _expand(y: np.ndarray, keep: np.ndarray, size: int) -> np.ndarray:
    out = np.zeros(size)
    out[np.nonzero(keep)[0]] = y
    return out


def kkt_residuals(prog: ConeProgram, sol: ConeSolution) -> dict:
    """Caller-side verification of an OPTIMAL solution."""
    cones = prog.cones
    x, y, z = sol.x, sol.y, sol.z
    cone = _Cone(cones.nonneg, cones.soc)
    xc = x[cones.free:]
    pres = float(np.linalg.norm(prog.A @ x - prog.b)) / (1.0 + float(np.linalg.norm(prog.b)))
    zfull = np.zeros(prog.c.size)
    zfull[cones.free:] = z
    dres = float(np.linalg.norm(prog.c + prog.A.T @ y - zfull)) / (1.0 + float(np.linalg.norm(prog.c)))
    gap = abs(float(xc @ z)) / max(1.0, abs(float(prog.c @ x)))
    return {"pres": pres, "dres": dres, "gap": gap,
            "primal_margin": cone.margin(xc), "dual_margin": cone.margin(z)}

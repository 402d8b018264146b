"""Embedded convex-QP solver: operator splitting with a cached factorization.

Solves   min 1/2 v'Pv + q'v   s.t.  lo <= Av <= hi,  lb <= v <= ub
with diagonal P (the only quadratic terms in this artifact are separable
consensus penalties). The iteration is the standard two-block splitting with
over-relaxation; box bounds are stacked as identity rows so everything is
one constraint block. On convergence an active-set polish solve tightens the
iterate to near machine precision; primal-infeasibility certificates come
from the dual-iterate difference. Everything is dense numpy: the fixtures
this package targets are desk-scale, and determinism matters more than
sparse performance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import ConfigError
from .program import ConvexProgram

DEFAULT_TOL = 1e-6
MAX_ITER = 50000
CHECK_INTERVAL = 25
SIGMA = 1e-6
ALPHA = 1.6
RHO_EQ_SCALE = 1e3
RHO_MIN, RHO_MAX = 1e-6, 1e6
EPS_INF = 1e-9


@dataclass
class Solution:
    values: np.ndarray
    objective: float
    status: str                # optimal | infeasible | iteration_limit
    achieved_tol: float
    iterations: int
    duality_gap: float
    dual: np.ndarray | None = None

    @property
    def optimal(self):
        return self.status == "optimal"


def polygonize_soc(s, sides):
    """Half-planes inscribing the disk of radius `s`.

    Normals sit at angles (2j+1)*pi/K and the right-hand side shrinks by
    cos(pi/K), so polygon vertices land exactly on the disk at angles
    2*pi*j/K: the polygon is contained in the disk (conservative cap) while
    axis points like (s, 0) stay feasible.
    """
    if sides < 8 or sides % 2:
        raise ConfigError("polygon sides must be even and >= 8")
    shrink = math.cos(math.pi / sides)
    out = []
    for j in range(sides):
        phi = (2 * j + 1) * math.pi / sides
        out.append((math.cos(phi), math.sin(phi), s * shrink))
    return out


def polygonize_program(program: ConvexProgram, sides) -> ConvexProgram:
    """Replace flagged SOC caps with linear half-planes (gate scales the rhs)."""
    new = program.copy()
    for cap in new.soc_caps:
        for j, (cp, cq, rhs) in enumerate(polygonize_soc(cap.s, sides)):
            if cap.gate is None:
                coeffs = {new.keys[cap.p]: cp, new.keys[cap.q]: cq}
                new.add_row(coeffs, -np.inf, rhs, f"{cap.name}#poly{j}")
            else:
                coeffs = {new.keys[cap.p]: cp, new.keys[cap.q]: cq,
                          new.keys[cap.gate]: -rhs}
                new.add_row(coeffs, -np.inf, 0.0, f"{cap.name}#poly{j}")
    new.soc_caps = []
    return new


class QpSolver:
    """Reusable solver bound to one program structure.

    Penalty centers and bounds may change between calls (the consensus ADMM
    re-centers every round); the KKT factorization depends only on the
    constraint matrix and penalty weights, so it is computed once per rho
    and reused across warm-started solves.
    """

    def __init__(self, program: ConvexProgram, tol=DEFAULT_TOL, max_iter=MAX_ITER):
        if program.soc_caps:
            raise ConfigError("SOC caps must be polygonized before solving")
        self.program = program
        self.tol = tol
        self.max_iter = max_iter
        self._factor = None
        self._factor_eq = None
        self._rho_base = 0.1
        w, _, A, lo, hi, lb, ub = program.arrays()
        n = len(w)
        self.Pd_raw = w.copy()
        self.A_raw = np.vstack([A, np.eye(n)]) if A.size else np.eye(n)
        self.m = self.A_raw.shape[0]
        self.D, self.E = self._ruiz(self.Pd_raw, self.A_raw)
        self.Pd = self.D * self.Pd_raw * self.D
        self.A = self.E[:, None] * self.A_raw * self.D[None, :]
        self._refresh_bounds()
        self._warm = None

    @staticmethod
    def _ruiz(Pd, A, iters=10):
        """Symmetric equilibration of the KKT block [[P, A'], [A, 0]]."""
        n, m = A.shape[1], A.shape[0]
        D = np.ones(n)
        E = np.ones(m)
        for _ in range(iters):
            As = E[:, None] * A * D[None, :]
            Ps = D * Pd * D
            col = np.maximum(np.max(np.abs(As), axis=0), np.abs(Ps))
            row = np.max(np.abs(As), axis=1)
            col[col < 1e-12] = 1.0
            row[row < 1e-12] = 1.0
            D /= np.sqrt(col)
            E /= np.sqrt(row)
        return D, E

    def _refresh_bounds(self):
        """Bounds may move between solves (pins, scenarios); the KKT factor
        only depends on the matrix, rho and the equality-row mask."""
        _, _, _, lo, hi, lb, ub = self.program.arrays()
        self.lo_raw = np.concatenate([lo, lb])
        self.hi_raw = np.concatenate([hi, ub])
        self.lo = self.E * self.lo_raw
        self.hi = self.E * self.hi_raw
        eq = np.isclose(self.lo_raw, self.hi_raw)
        if self._factor_eq is None or not np.array_equal(eq, self._factor_eq):
            self._factor = None
            self._factor_eq = eq

    def _rho_vec(self):
        rho = np.full(self.m, self._rho_base)
        rho[self._factor_eq] = self._rho_base * RHO_EQ_SCALE
        return rho

    def _factorize(self):
        n, m = len(self.Pd), self.m
        rho = self._rho_vec()
        K = np.zeros((n + m, n + m))
        K[:n, :n] = np.diag(self.Pd + SIGMA)
        K[:n, n:] = self.A.T
        K[n:, :n] = self.A
        K[n:, n:] = -np.diag(1.0 / rho)
        self._factor = (lu_factor(K), rho)

    def solve(self, warm=None) -> Solution:
        prog = self.program
        w, q_raw, *_ = prog.arrays()
        q = self.D * q_raw          # scaled linear term
        n, m = len(w), self.m
        self._refresh_bounds()
        if self._factor is None:
            self._factorize()

        if warm is None:
            warm = self._warm
        if warm is not None and len(warm[0]) == n:
            x = warm[0].copy()
            y = warm[1].copy() if warm[1] is not None else np.zeros(m)
        else:
            x = np.zeros(n)
            y = np.zeros(m)
        z = np.clip(self.A @ x, self.lo, self.hi)

        best = None
        status = "iteration_limit"
        iters = self.max_iter
        y_prev = y.copy()
        x_prev = x.copy()
        polish_trigger = 1e-4
        polished = None

        for k in range(1, self.max_iter + 1):
            lu, rho = self._factor
            rhs = np.concatenate([SIGMA * x - q, z - y / rho])
            sol = lu_solve(lu, rhs)
            xt, nu = sol[:n], sol[n:]
            zt = z + (nu - y) / rho
            x = ALPHA * xt + (1 - ALPHA) * x
            wv = ALPHA * zt + (1 - ALPHA) * z + y / rho
            z = np.clip(wv, self.lo, self.hi)
            y = rho * (wv - z)

            if k % CHECK_INTERVAL == 0 or k == self.max_iter:
                x_u, y_u = self.D * x, self.E * y
                r_p, r_d = self._residuals(x_u, y_u, q_raw)
                cur = max(r_p, r_d)
                if best is None or cur < best[0]:
                    best = (cur, x_u.copy(), y_u.copy())
                if r_p <= self.tol and r_d <= self.tol:
                    status = "optimal"
                    iters = k
                    break
                # the splitting identifies the active set well before it
                # reaches tight unscaled accuracy; let the polish KKT solve
                # finish the job once the scaled iterate has settled
                rp_s = float(np.max(np.abs(self.A @ x - z))) if m else 0.0
                rd_s = float(np.max(np.abs(self.Pd * x + q + self.A.T @ y)))
                if max(rp_s, rd_s) <= polish_trigger:
                    xp, yp, ach = self._polish(x_u, y_u, q_raw)
                    if ach <= self.tol:
                        polished = (xp, yp, ach)
                        status = "optimal"
                        iters = k
                        break
                    polish_trigger *= 0.25
                if self._primal_infeasible(self.E * (y - y_prev)):
                    status = "infeasible"
                    iters = k
                    break
                if self._dual_infeasible(self.D * (x - x_prev), q_raw):
                    raise ConfigError("program is unbounded below (dual infeasible)")
                self._adapt_rho(x, y, z, q, r_p, r_d)
                y_prev = y.copy()
                x_prev = x.copy()

        if status == "infeasible":
            return Solution(values=self.D * x, objective=math.nan, status="infeasible",
                            achieved_tol=math.inf, iterations=iters,
                            duality_gap=math.nan, dual=self.E * y)

        self._warm = (x.copy(), y.copy())
        if polished is not None:
            x_u, y_u, achieved = polished
        else:
            x_u, y_u = self.D * x, self.E * y
            if status == "iteration_limit" and best is not None:
                _, x_u, y_u = best
            x_u, y_u, achieved = self._polish(x_u, y_u, q_raw)
            if achieved <= self.tol:
                status = "optimal"
        gap = self._duality_gap(x_u, y_u, q_raw)
        return Solution(values=x_u, objective=prog.objective_value(x_u), status=status,
                        achieved_tol=achieved, iterations=iters,
                        duality_gap=gap, dual=y_u)

    # -- internals (raw/unscaled space) ---------------------------------------

    def _residuals(self, x, y, q):
        Ax = self.A_raw @ x
        viol = np.maximum(self.lo_raw - Ax, Ax - self.hi_raw)
        r_p = float(max(0.0, np.max(viol))) if self.m else 0.0
        r_d = float(np.max(np.abs(self.Pd_raw * x + q + self.A_raw.T @ y)))
        return r_p, r_d

    def _polish(self, x, y, q):
        """Active-set refinement; keep it only when it tightens the KKT error
        without breaking dual signs."""
        r_p0, r_d0 = self._residuals(x, y, q)
        base = max(r_p0, r_d0)
        eq = self._factor_eq
        Ax = self.A_raw @ x
        span = np.maximum(np.abs(self.lo_raw), 1.0)
        low = (~eq) & (Ax - self.lo_raw < 1e-6 * span) & (y < -1e-9)
        upp = (~eq) & (self.hi_raw - Ax < 1e-6 * np.maximum(np.abs(self.hi_raw), 1.0)) & (y > 1e-9)
        act = np.flatnonzero(eq | low | upp)
        if act.size == 0 and not np.any(self.Pd_raw > 0):
            return x, y, base
        A_act = self.A_raw[act]
        b_act = np.where(low[act], self.lo_raw[act],
                         np.where(upp[act], self.hi_raw[act], self.lo_raw[act]))
        n, ma = len(x), act.size
        K = np.zeros((n + ma, n + ma))
        K[:n, :n] = np.diag(self.Pd_raw + 1e-9)
        K[:n, n:] = A_act.T
        K[n:, :n] = A_act
        K[n:, n:] = -1e-9 * np.eye(ma)
        rhs = np.concatenate([-q, b_act])
        try:
            lu = lu_factor(K)
        except Exception:
            return x, y, base
        sol = lu_solve(lu, rhs)
        # one round of iterative refinement against the unregularized system
        K0 = K.copy()
        K0[:n, :n] = np.diag(self.Pd_raw)
        K0[n:, n:] = 0.0
        resid = rhs - K0 @ sol
        sol = sol + lu_solve(lu, resid)
        x_p = sol[:n]
        y_p = np.zeros(self.m)
        y_p[act] = sol[n:]
        # dual signs must stay consistent with the bound they claim active
        if np.any(y_p[np.flatnonzero(low)] > 1e-7) or np.any(y_p[np.flatnonzero(upp)] < -1e-7):
            return x, y, base
        r_p1, r_d1 = self._residuals(x_p, y_p, q)
        if max(r_p1, r_d1) < base and self._duality_gap(x_p, y_p, q) <= self._duality_gap(x, y, q) + self.tol:
            return x_p, y_p, max(r_p1, r_d1)
        return x, y, base

    def _primal_infeasible(self, dy):
        norm = float(np.max(np.abs(dy))) if dy.size else 0.0
        if norm < 1e-14:
            return False
        dyn = dy / norm
        if float(np.max(np.abs(self.A_raw.T @ dyn))) > EPS_INF * 100:
            return False
        pos, neg = np.maximum(dyn, 0.0), np.minimum(dyn, 0.0)
        # components pushing on an infinite bound invalidate the certificate
        if np.any(pos[np.isinf(self.hi_raw)] > 1e-9) or np.any(neg[np.isinf(self.lo_raw)] < -1e-9):
            return False
        pos_f = np.where(np.isfinite(self.hi_raw), pos, 0.0)
        neg_f = np.where(np.isfinite(self.lo_raw), neg, 0.0)
        hi_f = np.where(np.isfinite(self.hi_raw), self.hi_raw, 0.0)
        lo_f = np.where(np.isfinite(self.lo_raw), self.lo_raw, 0.0)
        support = float(hi_f @ pos_f + lo_f @ neg_f)
        return support < -EPS_INF * 100

    def _dual_infeasible(self, dx, q):
        norm = float(np.max(np.abs(dx))) if dx.size else 0.0
        if norm < 1e-14:
            return False
        dxn = dx / norm
        if float(np.max(np.abs(self.Pd_raw * dxn))) > EPS_INF * 100:
            return False
        if float(q @ dxn) > -EPS_INF * 100:
            return False
        Adx = self.A_raw @ dxn
        ok_up = np.all(Adx[np.isfinite(self.hi_raw)] <= 1e-7)
        ok_lo = np.all(Adx[np.isfinite(self.lo_raw)] >= -1e-7)
        return ok_up and ok_lo

    def _adapt_rho(self, x, y, z, q, r_p, r_d):
        # scaled-space balance drives rho; convergence is judged unscaled
        rp_s = float(np.max(np.abs(self.A @ x - z))) if self.m else 0.0
        rd_s = float(np.max(np.abs(self.Pd * x + q + self.A.T @ y)))
        denom_p = max(float(np.max(np.abs(self.A @ x))), float(np.max(np.abs(z))), 1e-10)
        denom_d = max(float(np.max(np.abs(self.Pd * x))), float(np.max(np.abs(q))),
                      float(np.max(np.abs(self.A.T @ y))), 1e-10)
        ratio = math.sqrt((rp_s / denom_p) / max(rd_s / denom_d, 1e-16))
        if ratio > 5.0 or ratio < 0.2:
            new_rho = min(max(self._rho_base * ratio, RHO_MIN), RHO_MAX)
            if new_rho != self._rho_base:
                self._rho_base = new_rho
                self._factorize()

    def _duality_gap(self, x, y, q):
        primal = 0.5 * float(x @ (self.Pd_raw * x)) + float(q @ x)
        y_pos = np.where(y > 1e-12, y, 0.0)
        y_neg = np.where(y < -1e-12, y, 0.0)
        up = np.where(np.isfinite(self.hi_raw), self.hi_raw, 0.0)
        lo = np.where(np.isfinite(self.lo_raw), self.lo_raw, 0.0)
        dual = -0.5 * float(x @ (self.Pd_raw * x)) - float(up @ y_pos) - float(lo @ y_neg)
        return abs(primal - dual)


def solve(program: ConvexProgram, tol=DEFAULT_TOL, warm=None, max_iter=MAX_ITER) -> Solution:
    """One-shot solve of a (polygonized) convex program."""
    return QpSolver(program, tol=tol, max_iter=max_iter).solve(warm=warm)

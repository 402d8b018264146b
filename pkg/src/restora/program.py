"""Convex-program container shared by the subproblem builder and the QP solver.

A program is a vector of named variables with box bounds, a linear objective,
separable quadratic penalty terms (weight/2 * (v - center)^2), two-sided
linear rows, and flagged second-order caps of the form

    p^2 + q^2 <= (gate * s)^2        (gate constant 1 when ungated)

that the solver polygonizes into linear rows before solving.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleAssignment


@dataclass(frozen=True)
class SocCap:
    p: int                 # variable index of the first component
    q: int                 # variable index of the second component
    s: float               # cap radius when the gate is 1
    gate: int | None = None  # variable index scaling the radius linearly
    name: str = ""


class ConvexProgram:
    def __init__(self):
        self.keys = []
        self.index = {}
        self.lb = []
        self.ub = []
        self.c_lin = []
        self.quad_w = []
        self.quad_center = []
        self.obj_const = 0.0
        self.rows = []          # (coeff dict var_idx -> float, lo, hi, name)
        self.soc_caps = []
        self.binary_keys = set()
        self._dense = None

    # -- construction -------------------------------------------------------

    def add_var(self, key, lb=-np.inf, ub=np.inf, binary=False):
        if key in self.index:
            raise ValueError(f"duplicate variable {key!r}")
        i = len(self.keys)
        self.keys.append(key)
        self.index[key] = i
        self.lb.append(lb)
        self.ub.append(ub)
        self.c_lin.append(0.0)
        self.quad_w.append(0.0)
        self.quad_center.append(0.0)
        if binary:
            self.binary_keys.add(key)
        self._dense = None
        return i

    def set_bounds(self, key, lb, ub):
        i = self.index[key]
        self.lb[i] = lb
        self.ub[i] = ub
        self._dense = None

    def add_linear_cost(self, key, coeff):
        self.c_lin[self.index[key]] += coeff

    def set_penalty(self, key, weight, center):
        i = self.index[key]
        self.quad_w[i] = weight
        self.quad_center[i] = center

    def set_center(self, key, center):
        self.quad_center[self.index[key]] = center

    def add_row(self, coeffs, lo, hi, name=""):
        self.rows.append(({self.index[k]: float(v) for k, v in coeffs.items()
                           if v != 0.0}, lo, hi, name))

    def add_eq(self, coeffs, rhs, name=""):
        self.add_row(coeffs, rhs, rhs, name)

    def add_soc_cap(self, p_key, q_key, s, gate_key=None, name=""):
        self.soc_caps.append(SocCap(
            p=self.index[p_key], q=self.index[q_key], s=float(s),
            gate=None if gate_key is None else self.index[gate_key], name=name))

    # -- views ---------------------------------------------------------------

    @property
    def n(self):
        return len(self.keys)

    def arrays(self):
        """Dense (P_diag, q, A, row_lo, row_hi, lb, ub); cached until edited.

        Penalty centers fold into the linear term: w/2*(v-c)^2 contributes
        w to the diagonal, -w*c to q, and w*c^2/2 to the constant.
        """
        n = self.n
        w = np.asarray(self.quad_w, dtype=float)
        c = np.asarray(self.quad_center, dtype=float)
        q = np.asarray(self.c_lin, dtype=float) - w * c
        if self._dense is None:
            A = np.zeros((len(self.rows), n))
            lo = np.zeros(len(self.rows))
            hi = np.zeros(len(self.rows))
            for r, (coeffs, l, h, _) in enumerate(self.rows):
                for i, v in coeffs.items():
                    A[r, i] = v
                lo[r] = l
                hi[r] = h
            self._dense = (A, lo, hi)
        A, lo, hi = self._dense
        return (w, q, A, lo, hi,
                np.asarray(self.lb, dtype=float), np.asarray(self.ub, dtype=float))

    def penalty_constant(self):
        w = np.asarray(self.quad_w, dtype=float)
        c = np.asarray(self.quad_center, dtype=float)
        return self.obj_const + 0.5 * float(w @ (c * c))

    def value_map(self, values):
        return {k: float(values[i]) for i, k in enumerate(self.keys)}

    def objective_value(self, values):
        w, q, *_ = self.arrays()
        v = np.asarray(values, dtype=float)
        return float(0.5 * v @ (w * v) + q @ v) + self.penalty_constant()

    # -- transforms ----------------------------------------------------------

    def fix_binaries(self, assignment):
        """Pin every binary variable to a 0/1 constant and drop its penalty.

        `assignment` maps binary keys to values; all binaries must be covered.
        Rows whose variables are then all pinned are checked immediately:
        a violated one raises InfeasibleAssignment before any solve.
        """
        missing = self.binary_keys - set(assignment)
        if missing:
            raise ValueError(f"assignment misses binaries: {sorted(missing)[:4]}...")
        new = self.copy()
        pinned = {}
        for key in self.binary_keys:
            val = assignment[key]
            if val not in (0, 1, 0.0, 1.0):
                raise ValueError(f"non-Boolean value {val!r} for {key!r}")
            i = new.index[key]
            lo, hi = new.lb[i], new.ub[i]
            if val < lo - 1e-9 or val > hi + 1e-9:
                raise InfeasibleAssignment(
                    f"{key!r}={int(val)} conflicts with pinned bound [{lo}, {hi}]")
            new.lb[i] = float(val)
            new.ub[i] = float(val)
            new.quad_w[i] = 0.0
            new.quad_center[i] = 0.0
            pinned[i] = float(val)
        for coeffs, lo, hi, name in new.rows:
            if coeffs and all(i in pinned for i in coeffs):
                lhs = sum(v * pinned[i] for i, v in coeffs.items())
                if lhs < lo - 1e-9 or lhs > hi + 1e-9:
                    raise InfeasibleAssignment(
                        f"fixed assignment violates {name or 'row'}: "
                        f"{lhs:.6g} outside [{lo:.6g}, {hi:.6g}]")
        new._dense = None
        return new

    def copy(self):
        new = ConvexProgram()
        new.keys = list(self.keys)
        new.index = dict(self.index)
        new.lb = list(self.lb)
        new.ub = list(self.ub)
        new.c_lin = list(self.c_lin)
        new.quad_w = list(self.quad_w)
        new.quad_center = list(self.quad_center)
        new.obj_const = self.obj_const
        new.rows = list(self.rows)
        new.soc_caps = list(self.soc_caps)
        new.binary_keys = set(self.binary_keys)
        return new

    def dump(self):
        """One line per variable and constraint, for diffing in tests."""
        out = []
        for i, k in enumerate(self.keys):
            tag = " bin" if k in self.binary_keys else ""
            pen = f" pen({self.quad_w[i]:g},{self.quad_center[i]:g})" if self.quad_w[i] else ""
            out.append(f"VAR {self._fmt_key(k)} [{self.lb[i]:g}, {self.ub[i]:g}]"
                       f" cost {self.c_lin[i]:g}{pen}{tag}")
        for coeffs, lo, hi, name in self.rows:
            terms = " + ".join(f"{v:g}*{self._fmt_key(self.keys[i])}"
                               for i, v in sorted(coeffs.items()))
            out.append(f"ROW {name}: {lo:g} <= {terms} <= {hi:g}")
        for cap in self.soc_caps:
            gate = self._fmt_key(self.keys[cap.gate]) if cap.gate is not None else "1"
            out.append(f"SOC {cap.name}: {self._fmt_key(self.keys[cap.p])}^2 + "
                       f"{self._fmt_key(self.keys[cap.q])}^2 <= ({gate}*{cap.s:g})^2")
        return "\n".join(out)

    @staticmethod
    def _fmt_key(key):
        if isinstance(key, tuple):
            return ":".join(str(p) for p in key)
        return str(key)

"""Revised simplex solver for the maximin weight LP and the min-max measure LP.

The weight problem

    maximise t  s.t.  sum_i w_i h_ij >= t (all j),  sum_i w_i = 1,  w >= 0,
                      a_k^T w <= b_k (optional extra constraints)

is solved through its dual

    minimise v + b^T lam  s.t.  sum_j h_ij mu_j - v - (A^T lam)_i <= 0,
                                sum_j mu_j = 1,  mu, lam >= 0,

whose simplex multipliers give ``w``.  Constraint generation then only adds
columns to the dual, so the previous basis stays feasible and the solve can
be warm-started.  The dual is also exactly the min-max problem over
probability vectors used by the optimality certificate.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import LPError

FEAS_TOL = 1e-9
OPT_TOL = 1e-9
PIVOT_TOL = 1e-11
REFACTOR_EVERY = 64


class Unbounded(Exception):
    pass


class Infeasible(Exception):
    pass


class RevisedSimplex:
    """``min c^T x  s.t.  A x = b, x >= 0`` with a dense basis inverse.

    Columns may be appended between calls to :meth:`solve`; the current
    basis is kept, so re-solving after adding columns is a warm start.
    Entering variables are priced by the most negative reduced cost with
    lowest-index tie-breaking; after ``10 * (rows + cols)`` consecutive
    degenerate pivots the rule switches to Bland's.
    """

    def __init__(self, A, b, c):
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float).ravel()
        c = np.asarray(c, dtype=float).ravel()
        if A.shape != (b.size, c.size):
            raise ValueError("inconsistent LP dimensions")
        sign = np.where(b < 0, -1.0, 1.0)
        self.m = b.size
        self._A = np.empty((self.m, max(16, 2 * c.size)))
        self._A[:, :c.size] = A * sign[:, None]
        self._c = np.empty(self._A.shape[1])
        self._c[:c.size] = c
        self.n = c.size
        self.b = b * sign
        self.basis: Optional[List[int]] = None
        self.Binv: Optional[np.ndarray] = None
        self.xB: Optional[np.ndarray] = None
        self.iterations = 0
        self.status = "unsolved"

    # -- problem data ------------------------------------------------------
    @property
    def A(self) -> np.ndarray:
        return self._A[:, :self.n]

    @property
    def c(self) -> np.ndarray:
        return self._c[:self.n]

    def add_columns(self, cols, costs) -> None:
        cols = np.atleast_2d(np.asarray(cols, dtype=float))
        costs = np.asarray(costs, dtype=float).ravel()
        k = costs.size
        if cols.shape != (self.m, k):
            raise ValueError("column block has the wrong shape")
        need = self.n + k
        if need > self._A.shape[1]:
            cap = max(need, 2 * self._A.shape[1])
            A = np.empty((self.m, cap))
            A[:, :self.n] = self.A
            c = np.empty(cap)
            c[:self.n] = self.c
            self._A, self._c = A, c
        self._A[:, self.n:need] = cols
        self._c[self.n:need] = costs
        self.n = need

    # -- linear algebra ----------------------------------------------------
    def _refactor(self) -> None:
        B = self.A[:, self.basis]
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError as exc:
            raise LPError("singular basis") from exc
        self.xB = self.Binv @ self.b
        self.xB[np.abs(self.xB) < 1e-13] = 0.0
        self._since_refactor = 0

    def _pivot(self, r: int, q: int, alpha: np.ndarray, step: float) -> None:
        self.xB -= step * alpha
        self.xB[r] = step
        piv = alpha[r]
        row = self.Binv[r] / piv
        self.Binv -= np.outer(alpha, row)
        self.Binv[r] = row
        self.basis[r] = q
        self._since_refactor += 1
        if self._since_refactor >= REFACTOR_EVERY:
            self._refactor()

    # -- core loop -----------------------------------------------------------
    def _iterate(self, cost: np.ndarray, allowed: np.ndarray, max_iter: int) -> None:
        degenerate = 0
        bland = False
        limit = 10 * (self.m + self.n)
        for _ in range(max_iter):
            cB = cost[self.basis]
            y = cB @ self.Binv
            d = cost - y @ self.A
            d[self.basis] = 0.0
            d[~allowed] = 0.0
            neg = np.flatnonzero(d < -OPT_TOL)
            if neg.size == 0:
                return
            if bland:
                q = int(neg[0])
            else:
                q = int(neg[np.argmin(d[neg])])
            alpha = self.Binv @ self.A[:, q]
            rows = np.flatnonzero(alpha > PIVOT_TOL)
            if rows.size == 0:
                raise Unbounded()
            ratios = np.maximum(self.xB[rows], 0.0) / alpha[rows]
            best = ratios.min()
            ties = rows[ratios <= best + 1e-12]
            if bland:
                r = int(min(ties, key=lambda i: self.basis[i]))
            else:
                r = int(ties[np.argmax(alpha[ties])])
            step = max(self.xB[r], 0.0) / alpha[r]
            if step <= FEAS_TOL:
                degenerate += 1
                if degenerate > limit:
                    bland = True
            else:
                degenerate = 0
            self._pivot(r, q, alpha, step)
            self.iterations += 1
        raise LPError("simplex iteration limit reached")

    def _phase_one(self, max_iter: int) -> None:
        m = self.m
        basis = [-1] * m
        A = self.A
        for j in range(self.n):
            col = A[:, j]
            nz = np.flatnonzero(col)
            if nz.size == 1 and col[nz[0]] == 1.0 and basis[nz[0]] < 0:
                basis[nz[0]] = j
        missing = [i for i in range(m) if basis[i] < 0]
        n_orig = self.n
        if missing:
            art = np.zeros((m, len(missing)))
            for k, i in enumerate(missing):
                art[i, k] = 1.0
                basis[i] = n_orig + k
            self.add_columns(art, np.zeros(len(missing)))
        self.basis = basis
        self._refactor()
        if missing:
            cost = np.zeros(self.n)
            cost[n_orig:] = 1.0
            allowed = np.ones(self.n, dtype=bool)
            self._iterate(cost, allowed, max_iter)
            if cost[self.basis] @ self.xB > 1e-8:
                raise Infeasible()
            # drive remaining (zero-level) artificials out of the basis
            for r, j in enumerate(list(self.basis)):
                if j < n_orig:
                    continue
                row = self.Binv[r] @ self.A[:, :n_orig]
                cand = [q for q in np.flatnonzero(np.abs(row) > 1e-9) if q not in self.basis]
                if not cand:
                    raise LPError("redundant equality row")
                q = int(cand[0])
                alpha = self.Binv @ self.A[:, q]
                self._pivot(r, q, alpha, 0.0)
            self.n = n_orig
            self._refactor()

    def solve(self, max_iter: Optional[int] = None) -> "RevisedSimplex":
        if max_iter is None:
            max_iter = 50 * (self.m + self.n) + 1000
        try:
            if self.basis is None:
                self._phase_one(max_iter)
            allowed = np.ones(self.n, dtype=bool)
            self._iterate(self.c, allowed, max_iter)
            self.status = "optimal"
        except Unbounded:
            self.status = "unbounded"
        except Infeasible:
            self.status = "infeasible"
            self.basis = None
        return self

    # -- solution ------------------------------------------------------------
    @property
    def x(self) -> np.ndarray:
        x = np.zeros(self.n)
        x[self.basis] = self.xB
        return x

    @property
    def duals(self) -> np.ndarray:
        return self.c[self.basis] @ self.Binv

    @property
    def objective(self) -> float:
        return float(self.c[self.basis] @ self.xB)

    def dump(self, names: Optional[Sequence[str]] = None) -> str:
        """Plain-text tableau ``B^-1 [A | b]`` with reduced costs, for debugging."""
        if self.basis is None:
            return "<no basis>"
        names = list(names) if names is not None else [f"x{j}" for j in range(self.n)]
        T = self.Binv @ self.A
        d = self.c - self.duals @ self.A
        lines = ["basis      | " + " ".join(f"{n:>9}" for n in names) + " |       rhs"]
        for r, j in enumerate(self.basis):
            lines.append(f"{names[j]:<10} | " + " ".join(f"{v:9.3g}" for v in T[r]) + f" | {self.xB[r]:9.3g}")
        lines.append("reduced    | " + " ".join(f"{v:9.3g}" for v in d) + f" | {self.objective:9.3g}")
        return "\n".join(lines)


# --- maximin weight LP ------------------------------------------------------

@dataclass
class MaximinLP:
    """Constraint rows ``h[:, j]`` (one column per parameter) and extra ``a^T w <= b``."""

    h: np.ndarray
    extra_linear_constraints: List[Tuple[np.ndarray, float]] = field(default_factory=list)

    def __post_init__(self):
        self.h = np.atleast_2d(np.asarray(self.h, dtype=float))
        if self.h.shape[0] < 1 or self.h.shape[1] < 1:
            raise ValueError("maximin LP needs at least one point and one constraint")
        if not np.all(np.isfinite(self.h)):
            raise ValueError("maximin LP matrix has non-finite entries")


@dataclass
class LPSolution:
    w: np.ndarray
    t: float
    status: str
    mu: Optional[np.ndarray] = None
    dual_value: float = float("nan")
    iterations: int = 0


class MaximinSolver:
    """Incremental solver: add constraint columns, re-solve warm.

    Column layout of the dual LP: ``v+, v-, lam_1..lam_K, s_1..s_l, mu_1..mu_m``.
    """

    def __init__(self, ell: int, extra: Sequence[Tuple[np.ndarray, float]] = ()):
        self.ell = ell
        self.extra = [(np.asarray(a, dtype=float).ravel(), float(b)) for a, b in extra]
        for a, _ in self.extra:
            if a.size != ell:
                raise ValueError("extra constraint has the wrong length")
        self.H = np.zeros((ell, 0))
        self._lp: Optional[RevisedSimplex] = None
        self.tau = 1.0
        self._n_fixed = 2 + len(self.extra) + ell

    @property
    def m(self) -> int:
        return self.H.shape[1]

    def _fixed_block(self):
        ell, K = self.ell, len(self.extra)
        A = np.zeros((ell + 1, self._n_fixed))
        c = np.zeros(self._n_fixed)
        A[:ell, 0], A[:ell, 1] = -1.0, 1.0
        c[0], c[1] = 1.0, -1.0
        for k, (a, bnd) in enumerate(self.extra):
            A[:ell, 2 + k] = -a
            c[2 + k] = bnd
        A[:ell, 2 + K:] = np.eye(ell)
        return A, c

    @staticmethod
    def _column_scale(H: np.ndarray) -> np.ndarray:
        big = np.abs(H).max(axis=0)
        return np.where(big > 0, 1.0 / np.where(big > 0, big, 1.0), 1.0)

    def _value_scale(self) -> float:
        # min_j max_i |h_ij| bounds |t| from above; dividing by it keeps v of order one
        tau = float(np.abs(self.H).max(axis=0).min())
        return tau if tau > 0 else 1.0

    def _mu_block(self, H: np.ndarray) -> np.ndarray:
        # each mu column is equilibrated separately, so one constraint with huge entries
        # does not push the reduced costs of the others below the optimality tolerance
        s = self._column_scale(H)
        return np.vstack([H * s, s[None, :] * self.tau])

    def add(self, rows) -> None:
        """Append constraints; ``rows`` is ``(k, ell)``: one row of ``h_i`` per parameter."""
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        if rows.shape[1] != self.ell:
            raise ValueError("constraint row has the wrong length")
        if not np.all(np.isfinite(rows)):
            raise ValueError("non-finite constraint row")
        self.H = np.hstack([self.H, rows.T])
        if self._lp is None:
            return
        tau = self._value_scale()
        if tau < 0.5 * self.tau:
            # rescaling the convexity row scales every basic value by the same positive
            # factor, so the current basis stays feasible
            self.tau = tau
            old = self.m - rows.shape[0]
            cols = slice(self._n_fixed, self._n_fixed + old)
            self._lp._A[-1, cols] = self._column_scale(self.H[:, :old]) * tau
            if self._lp.basis is not None:
                self._lp._refactor()
        self._lp.add_columns(self._mu_block(rows.T), np.zeros(rows.shape[0]))

    def solve(self) -> LPSolution:
        if self.m == 0:
            raise ValueError("no constraints added")
        if self._lp is None:
            self.tau = self._value_scale()
            A, c = self._fixed_block()
            b = np.zeros(self.ell + 1)
            b[-1] = 1.0
            self._lp = RevisedSimplex(A, b, c)
            self._lp.add_columns(self._mu_block(self.H), np.zeros(self.m))
        lp = self._lp.solve()
        if lp.status != "optimal":
            status = "infeasible" if lp.status == "unbounded" else "unbounded"
            return LPSolution(np.full(self.ell, np.nan), float("nan"), status, iterations=lp.iterations)
        y = lp.duals
        w = np.clip(-y[:self.ell], 0.0, None)
        w /= w.sum()
        x = lp.x
        mu = x[self._n_fixed:self._n_fixed + self.m] * self._column_scale(self.H) * self.tau
        dual_value = lp.objective * self.tau
        t = float(np.min(w @ self.H))
        return LPSolution(w, t, "optimal", mu=mu, dual_value=dual_value, iterations=lp.iterations)


def solve_maximin(lp: MaximinLP) -> LPSolution:
    solver = MaximinSolver(lp.h.shape[0], lp.extra_linear_constraints)
    solver.add(lp.h.T)
    return solver.solve()


def solve_minmax_measure(psi) -> Tuple[np.ndarray, float]:
    """Minimise over probability vectors ``mu`` the largest entry of ``psi @ mu``."""
    psi = np.atleast_2d(np.asarray(psi, dtype=float))
    if psi.shape[1] == 1:
        return np.ones(1), float(psi[:, 0].max())
    solver = MaximinSolver(psi.shape[0])
    solver.add(psi.T)
    sol = solver.solve()
    if sol.status != "optimal":
        raise LPError(f"min-max LP returned status {sol.status}")
    mu = np.clip(sol.mu, 0.0, None)
    mu /= mu.sum()
    return mu, float(np.max(psi @ mu))

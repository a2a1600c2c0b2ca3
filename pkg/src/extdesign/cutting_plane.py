"""Relaxation (cutting-plane) algorithm for extended optimal designs.

The weights live on a finite design space ``X``.  Each iteration solves the
maximin LP over the constraints generated so far, giving weights ``w^k`` and
the upper bound ``t^k``; the most violated constraint at ``w^k`` is then
found by :class:`~extdesign.search.ParameterSearch`, which also yields the
lower bound ``phi(w^k)``.  The loop stops when ``t^k - phi(w^k) < eps``.
"""
from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from .criteria import (DEFAULT_POLISHES, ActiveSet, Candidate, CriterionSpec, EXTENDED, _finite_candidates,
                       active_tolerance, candidate_rows, optimality_certificate)
from .design import DesignMeasure, design_from_weights
from .errors import ConfigError, LPError
from .lp import MaximinSolver
from .models import Box, FiniteSet, RegressionModel
from .search import GridSpec, ParameterSearch, lhs_sample  # noqa: F401  (re-exported)

DEFAULT_EPS = 1e-10
DEFAULT_MAX_ITER = 500


@dataclass
class GapRecord:
    k: int
    t: float
    phi: float
    delta: float

    def to_dict(self) -> dict:
        return {"k": self.k, "t": self.t, "phi": self.phi, "delta": self.delta}


@dataclass
class OptimizationReport:
    """Outcome of :func:`optimize`.

    ``value`` is ``phi`` at the returned weights (the lower end of the final
    sandwich), ``upper_bound`` the final LP value ``t``.
    """

    design: DesignMeasure
    value: float
    upper_bound: float
    converged: bool
    iterations: int
    gap_history: List[GapRecord]
    candidates: List[Candidate]
    X: np.ndarray
    weights: np.ndarray
    certificate: Optional[float] = None
    active: Optional[ActiveSet] = None
    seeds: dict = field(default_factory=dict)
    timing: float = 0.0
    criterion: str = ""

    def to_dict(self) -> dict:
        return {
            "criterion": self.criterion,
            "design": self.design.to_dict(),
            "value": self.value,
            "upper_bound": self.upper_bound,
            "converged": self.converged,
            "iterations": self.iterations,
            "gap_history": [g.to_dict() for g in self.gap_history],
            "certificate": self.certificate,
            "generated": [c.to_dict() for c in self.candidates],
            "seeds": self.seeds,
            "timing": self.timing,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def gap_history_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["k", "t", "phi", "delta"])
        for g in self.gap_history:
            writer.writerow([g.k, repr(g.t), repr(g.phi), repr(g.delta)])
        return buf.getvalue()


def _points(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return X[:, None] if X.ndim == 1 else X


def inner_argmin(spec: CriterionSpec, model: RegressionModel, w, search: ParameterSearch,
                 n_starts: int = DEFAULT_POLISHES):
    """Most violated constraint at weights ``w``: ``(candidate, H*)``.

    The candidate carries ``theta`` (and ``x_star`` for eG); the polished
    point is appended to the search grid.
    """
    return search.search(w, n_starts=n_starts, append=True)[0]


def _certify(spec, model, X, w, value, cands, rows):
    """Active set among generated constraints and the certificate value."""
    h = rows @ w
    tol = active_tolerance(value)
    keep = np.flatnonzero(h <= value + tol)
    active = ActiveSet([cands[k] for k in keep], h[keep], value)
    xi = DesignMeasure(X, w)  # full-length weights keep rows aligned with X
    cert = optimality_certificate(spec, model, xi, X, active)
    return active, cert


def optimize(spec: CriterionSpec, model: RegressionModel, X, domain, eps: float = DEFAULT_EPS,
             grid: Optional[GridSpec] = None, w0=None, max_iter: int = DEFAULT_MAX_ITER,
             candidates: Sequence[Candidate] = (), threads: int = 1,
             certify: bool = True, n_starts: int = DEFAULT_POLISHES) -> OptimizationReport:
    """Maximise the extended criterion ``spec`` over designs supported on ``X``.

    ``candidates`` seeds the LP with constraints carried over from an earlier
    run (for example on a coarser design space).
    """
    if spec.kind not in EXTENDED:
        raise ConfigError(f"optimize handles extended criteria, not {spec.kind!r}")
    if not eps > 0:
        raise ConfigError("eps must be positive")
    X = _points(X)
    if spec.kind == "eG" and spec.design_space is None:
        spec = replace(spec, design_space=X)
    ell = len(X)
    start = time.perf_counter()
    grid = grid or GridSpec()
    seeds = {"grid": grid.seed}

    if isinstance(domain, FiniteSet):
        cands = _finite_candidates(spec, domain)
        rows = candidate_rows(spec, model, X, cands)
        ok = np.all(np.isfinite(rows), axis=1)
        cands = [c for c, good in zip(cands, ok) if good]
        rows = rows[ok]
        if not cands:
            raise ConfigError("no admissible parameter in the finite domain")
        solver = MaximinSolver(ell)
        solver.add(rows)
        sol = solver.solve()
        if sol.status != "optimal":
            raise LPError(f"maximin LP status {sol.status}")
        w = sol.w
        value = float(np.min(rows @ w))
        history = [GapRecord(0, sol.t, value, sol.t - value)]
        report = OptimizationReport(design_from_weights(X, w), value, sol.t, True, 1, history,
                                    cands, X, w, seeds=seeds, criterion=spec.kind)
        if certify:
            report.active, report.certificate = _certify(spec, model, X, w, value, cands, rows)
        report.timing = time.perf_counter() - start
        return report

    if not isinstance(domain, Box):
        raise ConfigError("parameter domain must be a Box or a FiniteSet")
    search = ParameterSearch(spec, model, X, domain, grid, threads=threads)
    w = np.full(ell, 1.0 / ell) if w0 is None else np.asarray(w0, dtype=float)
    if w.shape != (ell,) or np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
        raise ConfigError("initial weights must be a probability vector over X")

    solver = MaximinSolver(ell)
    cands: List[Candidate] = list(candidates)
    row_list: List[np.ndarray] = []
    if cands:
        seeded = candidate_rows(spec, model, X, cands)
        ok = np.all(np.isfinite(seeded), axis=1)
        cands = [c for c, good in zip(cands, ok) if good]
        row_list = list(seeded[ok])
    cand, H = inner_argmin(spec, model, w, search, n_starts)
    cands.append(cand)
    row_list.append(candidate_rows(spec, model, X, [cand])[0])
    solver.add(np.array(row_list))

    history: List[GapRecord] = []
    converged = False
    t = np.inf
    for k in range(1, max_iter + 1):
        sol = solver.solve()
        if sol.status != "optimal":
            raise LPError(f"maximin LP status {sol.status}")
        w, t = sol.w, sol.t
        cand, H = inner_argmin(spec, model, w, search, n_starts)
        # every generated constraint is a point of the domain, so t bounds phi(w) as well
        phi = min(H, t)
        history.append(GapRecord(k, t, phi, t - phi))
        if t - phi < eps:
            converged = True
            break
        row = candidate_rows(spec, model, X, [cand])[0]
        cands.append(cand)
        row_list.append(row)
        solver.add(row[None, :])

    report = OptimizationReport(design_from_weights(X, w), float(phi), float(t), converged,
                                len(history), history, cands, X, w, seeds=seeds,
                                criterion=spec.kind)
    if certify:
        rows = np.array(row_list)
        report.active, report.certificate = _certify(spec, model, X, w, phi, cands, rows)
    report.timing = time.perf_counter() - start
    return report


def refine_design_space(X0, support, span: float, n_points: int = 21,
                        lower=None, upper=None) -> np.ndarray:
    """``X0`` plus ``n_points`` evenly spaced values within ``+-span`` (relative) of each support point.

    Multi-dimensional points are refined along each axis separately.  New
    points are clipped to ``[lower, upper]``, which defaults to the bounding
    box of ``X0``.
    """
    X0 = _points(X0)
    lo = X0.min(axis=0) if lower is None else np.asarray(lower, dtype=float)
    hi = X0.max(axis=0) if upper is None else np.asarray(upper, dtype=float)
    new = [X0]
    offsets = np.linspace(-span, span, n_points)
    for s in _points(support):
        for j in range(X0.shape[1]):
            pts = np.repeat(s[None, :], n_points, axis=0)
            pts[:, j] = s[j] * (1 + offsets) if s[j] != 0 else offsets * np.ptp(X0[:, j])
            new.append(np.clip(pts, lo, hi))
    allpts = np.vstack(new)
    return np.unique(np.round(allpts, 12), axis=0)


def optimize_refined(spec: CriterionSpec, model: RegressionModel, X0, domain, rounds: int = 3,
                     span: float = 0.2, shrink: float = 0.25, n_points: int = 21, **kw) -> OptimizationReport:
    """:func:`optimize` on ``X0``, then on design spaces refined around the support.

    Round ``r`` uses the relative half-width ``span * shrink**(r-1)``.  Each
    round keeps ``X0``, starts from the previous weights and reuses the
    constraints generated so far.  Refined points stay within the model's
    design bounds when it declares them.
    """
    report = optimize(spec, model, X0, domain, **kw)
    X0 = _points(X0)
    lower = None if model.x_lower is None else np.asarray(model.x_lower, dtype=float)
    upper = None if model.x_upper is None else np.asarray(model.x_upper, dtype=float)
    total = report.timing
    for r in range(rounds):
        X = refine_design_space(X0, report.design.support, span * shrink ** r, n_points, lower, upper)
        w0 = np.zeros(len(X))
        for x, wt in zip(report.design.support, report.design.weights):
            w0[np.argmin(np.abs(X - x).sum(axis=1))] += wt
        kw2 = dict(kw, w0=w0, candidates=report.candidates)
        report = optimize(spec, model, X, domain, **kw2)
        total += report.timing
    report.timing = total
    return report

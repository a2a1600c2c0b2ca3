"""Global search for the most violated constraint over a box parameter domain.

The search evaluates the constraint rows on a fixed space-filling grid once,
so each query for new weights costs a single matrix-vector product.  The
best grid point is then polished with L-BFGS-B using analytic gradients, and
for eE and ec the ``theta -> theta0`` limit is compared as well.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize
from scipy.spatial import cKDTree

from .criteria import (DEFAULT_POLISHES, Candidate, CriterionSpec, CriterionValue, limit_candidate,
                       point_rows)
from .errors import ConfigError
from .models import Box, RegressionModel

DEFAULT_SEED = 20131001
CHUNK = 8192
NEIGHBOURS = 10


@dataclass(frozen=True)
class GridSpec:
    """How the parameter box is covered before local polishing."""

    kind: str = "latin_hypercube"
    n_points: int = 10_000
    seed: int = DEFAULT_SEED
    points: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("latin_hypercube", "full_grid", "explicit"):
            raise ConfigError(f"unknown grid kind {self.kind!r}")
        if self.kind == "explicit" and self.points is None:
            raise ConfigError("explicit grids need points")
        if self.kind != "explicit" and self.n_points < 1:
            raise ConfigError("grid needs at least one point")


def lhs_sample(box: Box, n: int, seed: int = DEFAULT_SEED) -> np.ndarray:
    """Latin hypercube sample of ``n`` points in ``box`` (one point per stratum and axis)."""
    rng = np.random.default_rng(seed)
    u = np.empty((n, box.dim))
    for j in range(box.dim):
        u[:, j] = (rng.permutation(n) + rng.random(n)) / n
    return box.from_unit(u)


def full_grid(box: Box, n: int) -> np.ndarray:
    """Tensor grid with about ``n`` points, including the box corners."""
    k = max(2, int(round(n ** (1.0 / box.dim))))
    axes = [np.linspace(lo, hi, k) for lo, hi in zip(box.lower, box.upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def grid_points(box: Box, grid: GridSpec, seed_offset: int = 0) -> np.ndarray:
    if grid.kind == "latin_hypercube":
        return lhs_sample(box, grid.n_points, grid.seed + seed_offset)
    if grid.kind == "full_grid":
        return full_grid(box, grid.n_points)
    pts = np.atleast_2d(np.asarray(grid.points, dtype=float))
    if pts.shape[1] != box.dim:
        raise ConfigError("explicit grid has the wrong dimension")
    return pts


def parallel_map(fn: Callable, items: Sequence, threads: int = 1) -> list:
    """Ordered map; runs on a thread pool when ``threads > 1``."""
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


class ParameterSearch:
    """Cached constraint rows on a grid over ``domain`` for the design points ``X``.

    In worst-case mode without anchors the grid covers pairs
    ``(theta, theta0)`` in the product box.
    """

    def __init__(self, spec: CriterionSpec, model: RegressionModel, X, domain: Box,
                 grid: Optional[GridSpec] = None, threads: int = 1):
        if not isinstance(domain, Box):
            raise ConfigError("the grid search needs a box domain")
        if spec.worst_case and spec.anchors is not None:
            raise ConfigError("anchored worst-case criteria are evaluated per anchor")
        X = np.asarray(X, dtype=float)
        self.X = X[:, None] if X.ndim == 1 else X
        self.spec = spec if spec.kind != "eG" or spec.design_space is not None \
            else replace(spec, design_space=self.X)
        self.model = model
        self.domain = domain
        self.grid = grid or GridSpec()
        self.threads = threads
        self.pair = spec.worst_case
        self.delta0 = spec.exclusion_radius or 1e-4 * domain.diameter
        p = domain.dim
        if self.pair:
            self.space = Box(np.concatenate([domain.lower, domain.lower]),
                             np.concatenate([domain.upper, domain.upper]))
            pts = np.hstack([grid_points(domain, self.grid), grid_points(domain, self.grid, 1)])
        else:
            self.space = domain
            pts = grid_points(domain, self.grid)
        self.points = pts
        chunks = [slice(a, min(a + CHUNK, len(pts))) for a in range(0, len(pts), CHUNK)]
        parts = parallel_map(lambda s: self._rows_for(pts[s]), chunks, threads)
        self.rows = np.vstack([r for r, _ in parts]) if parts else np.zeros((0, len(self.X)))
        self.valid = np.concatenate([v for _, v in parts]) if parts else np.zeros(0, bool)
        self.extra_points: List[np.ndarray] = []
        self.extra_rows: List[np.ndarray] = []
        self.winners: List[int] = []
        self.p = p
        k = min(NEIGHBOURS, len(pts) - 1)
        if k > 0:
            _, nbrs = cKDTree(self.space.to_unit(pts)).query(self.space.to_unit(pts), k=k + 1)
            self.neighbours = nbrs[:, 1:]
        else:
            self.neighbours = np.zeros((len(pts), 0), dtype=int)

    # rows -----------------------------------------------------------------
    def _split(self, pts):
        p = self.domain.dim
        if self.pair:
            return pts[:, :p], pts[:, p:]
        return pts, self.spec.theta0

    def _rows_for(self, pts) -> Tuple[np.ndarray, np.ndarray]:
        thetas, anchors = self._split(pts)
        rows = point_rows(self.spec, self.model, self.X, thetas, anchors)
        dist = np.linalg.norm(thetas - anchors, axis=1)
        valid = np.all(np.isfinite(rows), axis=1) & (dist >= self.delta0)
        rows[~valid] = 0.0
        return rows, valid

    def values(self, w) -> np.ndarray:
        """``H(w, theta)`` on every grid point, ``inf`` where excluded."""
        w = np.asarray(w, dtype=float)
        vals = np.where(self.valid, self.rows @ w, np.inf)
        if self.extra_rows:
            vals = np.concatenate([vals, np.vstack(self.extra_rows) @ w])
        return vals

    def _all_points(self) -> np.ndarray:
        if self.extra_points:
            return np.vstack([self.points] + self.extra_points)
        return self.points

    def append(self, point, row) -> None:
        self.extra_points.append(np.asarray(point, dtype=float)[None, :])
        self.extra_rows.append(np.asarray(row, dtype=float)[None, :])

    def candidate(self, point) -> Candidate:
        theta, anchor = self._split(np.asarray(point, dtype=float)[None, :])
        anchor = np.asarray(anchor, dtype=float).reshape(-1, self.domain.dim)[0]
        x_star = None
        if self.spec.kind == "eG":
            _, xs = point_rows(self.spec, self.model, self.X, theta, anchor, return_xstar=True)
            x_star = xs[0]
        return Candidate(theta[0].copy(), anchor.copy(), x_star=x_star)

    # value and gradient --------------------------------------------------
    def value_grad(self, w, point) -> Optional[Tuple[float, np.ndarray]]:
        """``H(w, .)`` and its gradient in the search coordinates (``None`` if vacuous)."""
        spec, model, X = self.spec, self.model, self.X
        p = self.domain.dim
        point = np.asarray(point, dtype=float)
        theta = point[:p]
        theta0 = point[p:] if self.pair else spec.theta0
        n = len(X)
        dev = model.eta(X, theta) - model.eta(X, theta0)
        J = np.broadcast_to(model.jac(X, theta), (n, p))
        wd = w * dev
        S = float(wd @ dev)
        dS = 2.0 * wd @ J
        dS0 = -2.0 * wd @ np.broadcast_to(model.jac(X, theta0), (n, p)) if self.pair else None
        if spec.kind == "eE":
            diff = theta - theta0
            D = float(diff @ diff)
            dD, dD0 = 2 * diff, -2 * diff
        elif spec.kind == "ec":
            g = spec.functional
            gap = float(g.value(theta) - g.value(theta0))
            D = gap ** 2
            dD = 2 * gap * g.grad(theta)
            dD0 = -2 * gap * g.grad(theta0) if self.pair else None
        else:
            Z = spec.design_space
            devZ = model.eta(Z, theta) - model.eta(Z, theta0)
            k = int(np.argmax(devZ ** 2))
            D = float(devZ[k] ** 2)
            dD = 2 * devZ[k] * np.broadcast_to(model.jac(Z[k], theta), (p,))
            dD0 = -2 * devZ[k] * np.broadcast_to(model.jac(Z[k], theta0), (p,)) if self.pair else None
        if not D > 0:
            return None
        F = spec.K + 1.0 / D
        H = S * F
        grad = dS * F - S * dD / D ** 2
        if self.pair:
            grad = np.concatenate([grad, dS0 * F - S * dD0 / D ** 2])
        return H, grad

    def polish(self, w, start) -> Tuple[np.ndarray, float]:
        """L-BFGS-B from ``start`` in unit-box coordinates; returns the point and ``H``."""
        box = self.space
        width = box.upper - box.lower
        base = self.value_grad(w, start)
        if base is None:
            return np.asarray(start, dtype=float), np.inf
        scale = base[0] if base[0] > 0 else 1.0
        penalty = 1e6

        def fun(z):
            out = self.value_grad(w, box.from_unit(z))
            if out is None or not np.isfinite(out[0]):
                return penalty, np.zeros_like(z)
            return out[0] / scale, out[1] * width / scale

        res = minimize(fun, box.to_unit(start), jac=True, method="L-BFGS-B",
                       bounds=[(0.0, 1.0)] * len(width),
                       options={"maxiter": 200, "ftol": 1e-15, "gtol": 1e-12})
        point = box.from_unit(np.clip(res.x, 0.0, 1.0))
        out = self.value_grad(w, point)
        if out is None:
            return point, np.inf
        return point, float(out[0])

    def _admissible(self, point) -> bool:
        theta, anchor = self._split(point[None, :])
        return bool(np.linalg.norm(theta[0] - np.ravel(anchor)[: self.domain.dim]) >= self.delta0)

    def _starts(self, vals, n_starts: int) -> List[int]:
        """Indices of the ``n_starts`` best discrete local minima of ``vals``.

        A grid point is a discrete local minimum when no nearest neighbour
        has a smaller value; points appended by earlier searches compete as
        well.  Starting from every basin, not just the best grid values,
        keeps narrow valleys that fall between grid points from being missed.
        The winners of earlier searches are always added, so a valley found
        once is revisited at later weights.
        """
        finite = np.isfinite(vals)
        if not finite.any():
            return []
        n_grid = len(self.points)
        base = vals[:n_grid]
        if self.neighbours.shape[1]:
            is_min = finite[:n_grid] & (base <= base[self.neighbours].min(axis=1))
        else:
            is_min = finite[:n_grid].copy()
        cand = np.concatenate([np.flatnonzero(is_min), n_grid + np.flatnonzero(finite[n_grid:])])
        if cand.size == 0:
            cand = np.flatnonzero(finite)
        order = [int(i) for i in cand[np.argsort(vals[cand], kind="stable")][:n_starts]]
        return order + [i for i in dict.fromkeys(self.winners) if finite[i] and i not in order]

    def search(self, w, n_starts: int = 1, append: bool = True):
        """Polished minimisers from the ``n_starts`` best discrete local minima of the grid.

        Returns a list of ``(candidate, value)`` sorted by value, including
        the direction limit when it applies.
        """
        w = np.asarray(w, dtype=float)
        vals = self.values(w)
        pts = self._all_points()
        found: List[Tuple[Candidate, float]] = []
        where: List[int] = []
        for idx in self._starts(vals, n_starts):
            point, val = self.polish(w, pts[idx])
            pos = idx
            if not (np.isfinite(val) and self._admissible(point) and val <= vals[idx]):
                point, val = pts[idx], float(vals[idx])
            elif append:
                row = point_rows(self.spec, self.model, self.X, *self._split(point[None, :]))[0]
                if np.all(np.isfinite(row)):
                    pos = len(self.points) + len(self.extra_points)
                    self.append(point, row)
            found.append((self.candidate(point), val))
            where.append(pos)
        if append and found:
            self.winners.append(where[int(np.argmin([v for _, v in found]))])
        if not self.pair:
            lim = limit_candidate(self.spec, self.model, self.X, w)
            if lim is not None:
                found.append(lim)
        if not found:
            raise ConfigError("every grid point is excluded or vacuous")
        found.sort(key=lambda cv: cv[1])
        return found

    def near_boundary(self, cand: Candidate) -> bool:
        return (not cand.is_limit) and np.linalg.norm(cand.theta - cand.theta0) < 2 * self.delta0

    def evaluate(self, w, n_starts: int = DEFAULT_POLISHES) -> CriterionValue:
        found = self.search(w, n_starts=n_starts, append=False)
        cands = [c for c, _ in found]
        vals = np.array([v for _, v in found])
        best = cands[0]
        return CriterionValue(float(vals[0]), best, self.near_boundary(best), cands, vals)

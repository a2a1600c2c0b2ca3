"""Discrete design measures, the L2(xi) norm and information matrices."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Callable, Iterable, Union

import numpy as np

from .errors import DesignError, NumericError
from .models import RegressionModel

PRUNE_THRESHOLD = 1e-9
MERGE_TOL = 1e-12


@dataclass(frozen=True)
class DesignMeasure:
    """Weights on distinct support points (rows of ``support``)."""

    support: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.support.shape[1]

    def scaled(self, a: float) -> "DesignMeasure":
        """Measure with weights multiplied by ``a`` (no longer a probability)."""
        return DesignMeasure(self.support, self.weights * a)

    def to_dict(self) -> dict:
        return {"support": self.support.tolist(), "weights": self.weights.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"x{i + 1}" for i in range(self.dim)] + ["weight"])
        for x, w in zip(self.support, self.weights):
            writer.writerow([repr(float(v)) for v in x] + [repr(float(w))])
        return buf.getvalue()

    def __str__(self) -> str:
        return format_design(self)


def _merge_duplicates(support: np.ndarray, weights: np.ndarray, tol: float):
    keep_x, keep_w = [], []
    for x, w in zip(support, weights):
        for k, y in enumerate(keep_x):
            if np.all(np.abs(x - y) <= tol):
                keep_w[k] += w
                break
        else:
            keep_x.append(x.copy())
            keep_w.append(float(w))
    return np.array(keep_x).reshape(-1, support.shape[1]), np.array(keep_w)


def validate_design(support, weights, tol: float = 1e-9, renormalize: bool = False,
                    prune: float = PRUNE_THRESHOLD) -> DesignMeasure:
    """Build a :class:`DesignMeasure` from raw support points and weights.

    Duplicate points are merged by adding their weights, weights below
    ``prune`` are dropped and the remainder is renormalised.  Unless
    ``renormalize`` is set, the input weights must sum to one within ``tol``.
    """
    support = np.asarray(support, dtype=float)
    if support.ndim == 1:
        support = support[:, None]
    weights = np.asarray(weights, dtype=float).ravel()
    if support.shape[0] != weights.size:
        raise DesignError(f"{support.shape[0]} support points but {weights.size} weights")
    if weights.size == 0:
        raise DesignError("empty design")
    if not (np.all(np.isfinite(support)) and np.all(np.isfinite(weights))):
        raise DesignError("non-finite support point or weight")
    if np.any(weights < -tol):
        raise DesignError(f"negative weight {weights.min():g}")
    weights = np.clip(weights, 0.0, None)
    total = weights.sum()
    if renormalize:
        if total <= 0:
            raise DesignError("weights sum to zero")
        weights = weights / total
    elif abs(total - 1.0) > tol:
        raise DesignError(f"weights sum to {total!r}, expected 1")
    support, weights = _merge_duplicates(support, weights, MERGE_TOL)
    mask = weights >= prune
    if not np.any(mask):
        raise DesignError("no support point left after pruning")
    support, weights = support[mask], weights[mask]
    return DesignMeasure(support, weights / weights.sum())


def uniform_design(points) -> DesignMeasure:
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    return validate_design(points, np.full(len(points), 1.0 / len(points)))


def design_from_weights(X, w, prune: float = PRUNE_THRESHOLD) -> DesignMeasure:
    """Design supported on the rows of ``X`` with (LP) weight vector ``w``."""
    w = np.clip(np.asarray(w, dtype=float), 0.0, None)
    return validate_design(X, w, renormalize=True, prune=prune)


def mix(xi: DesignMeasure, nu: DesignMeasure, alpha: float) -> DesignMeasure:
    """The measure ``(1 - alpha) xi + alpha nu`` on the union of supports."""
    support = np.vstack([xi.support, nu.support])
    weights = np.concatenate([(1 - alpha) * xi.weights, alpha * nu.weights])
    support, weights = _merge_duplicates(support, weights, MERGE_TOL)
    return DesignMeasure(support, weights)


def design_from_dict(data: dict) -> DesignMeasure:
    try:
        return validate_design(data["support"], data["weights"])
    except KeyError as exc:
        raise DesignError(f"design JSON lacks key {exc}") from None


def load_design(path) -> DesignMeasure:
    with open(path) as fh:
        return design_from_dict(json.load(fh))


def format_design(xi: DesignMeasure, digits: int = 4) -> str:
    """Two-row display: support points above, weights below."""
    if xi.dim == 1:
        top = [f"{x[0]:.{digits}g}" for x in xi.support]
    else:
        top = ["(" + ", ".join(f"{v:.{digits}g}" for v in x) + ")" for x in xi.support]
    bottom = [f"{w:.{digits}g}" for w in xi.weights]
    width = [max(len(a), len(b)) for a, b in zip(top, bottom)]
    line1 = "  ".join(a.rjust(n) for a, n in zip(top, width))
    line2 = "  ".join(b.rjust(n) for b, n in zip(bottom, width))
    return f"x: {line1}\nw: {line2}"


def l2_norm_sq(xi: DesignMeasure, f: Union[Callable, Iterable[float]]) -> float:
    """``sum_i w_i f(x_i)^2``; ``f`` is a callable or its values on the support."""
    if callable(f):
        values = np.array([f(x) for x in xi.support], dtype=float)
    else:
        values = np.asarray(f, dtype=float).ravel()
    if values.size != xi.size:
        raise DesignError("function values do not match the support size")
    if not np.all(np.isfinite(values)):
        raise NumericError("non-finite function value in L2 norm")
    return float(np.dot(xi.weights, values ** 2))


def info_matrix(model: RegressionModel, xi: DesignMeasure, theta) -> np.ndarray:
    """``sum_i w_i J(x_i) J(x_i)^T`` at ``theta``, symmetrised."""
    J = model.jac(xi.support, np.asarray(theta, dtype=float))
    J = np.broadcast_to(J, (xi.size, model.p))
    if not np.all(np.isfinite(J)):
        raise NumericError("non-finite jacobian in information matrix")
    M = (J * xi.weights[:, None]).T @ J
    return 0.5 * (M + M.T)


def min_eigen(M: np.ndarray):
    """Smallest eigenvalue and a unit eigenvector of a symmetric matrix."""
    vals, vecs = np.linalg.eigh(0.5 * (M + M.T))
    return float(vals[0]), vecs[:, 0]


def merge_close_points(xi: DesignMeasure, atol: float = 0.0, rtol: float = 0.0) -> DesignMeasure:
    """Merge support points that are neighbours within ``atol + rtol * |x|``.

    Clusters are formed by single linkage; a cluster is replaced by its
    weighted mean location carrying the summed weight.  Useful for reading
    off designs computed on fine design spaces, where an optimal support
    point falls between grid points and its mass is split.
    """
    n = xi.size
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    norms = np.linalg.norm(xi.support, axis=1)
    for i in range(n):
        for j in range(i + 1, n):
            tol = atol + rtol * max(norms[i], norms[j])
            if np.linalg.norm(xi.support[i] - xi.support[j]) <= tol:
                parent[find(i)] = find(j)
    roots = sorted({find(i) for i in range(n)}, key=lambda r: min(k for k in range(n) if find(k) == r))
    support, weights = [], []
    for r in roots:
        idx = [k for k in range(n) if find(k) == r]
        w = xi.weights[idx]
        support.append((xi.support[idx] * w[:, None]).sum(axis=0) / w.sum())
        weights.append(w.sum())
    return DesignMeasure(np.array(support), np.array(weights))

"""Extended and classical design criteria.

Every extended criterion is a minimum over *candidates* of a quantity that is
linear in the design weights.  A candidate is either a parameter point
``theta`` (with its anchor ``theta0``), or the limit ``theta -> theta0``
along a unit direction ``u``.  :func:`candidate_rows` turns candidates into
rows ``h_i`` over design points, so that ``H(xi, cand) = sum_i w_i h_i``;
the LP, the cutting-plane loop and the equivalence-theorem checks all work
on those rows.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence

import numpy as np

from .design import DesignMeasure, info_matrix, min_eigen
from .errors import ConfigError, RegistryError, VacuousConstraint
from .lp import solve_minmax_measure
from .models import Box, FiniteSet, RegressionModel, fd_step

EXTENDED = ("eE", "ec", "eG")
CLASSICAL = ("E", "c", "G", "D")
KINDS = EXTENDED + CLASSICAL
GINV_CUTOFF = 1e-10
ESTIMABILITY_TOL = 1e-8


# --- scalar functionals -------------------------------------------------------

@dataclass(frozen=True)
class ScalarFunctional:
    """``g(theta)``; callables are vectorised over a leading axis of ``theta``."""

    name: str
    g: Callable[[np.ndarray], np.ndarray]
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def value(self, theta) -> np.ndarray:
        return np.asarray(self.g(np.asarray(theta, dtype=float)), dtype=float)

    def grad(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if self.gradient is not None:
            return np.asarray(self.gradient(theta), dtype=float)
        h = fd_step(theta)
        cols = []
        for i in range(theta.shape[-1]):
            step = np.zeros_like(theta)
            step[..., i] = h[..., i]
            cols.append((self.g(theta + step) - self.g(theta - step)) / (2 * h[..., i]))
        return np.stack(cols, axis=-1)


def _auc(th):
    return th[..., 0] * (1 / th[..., 1] - 1 / th[..., 2])


def _auc_grad(th):
    a, k2, k3 = th[..., 0], th[..., 1], th[..., 2]
    return np.stack([1 / k2 - 1 / k3, -a / k2 ** 2, a / k3 ** 2], axis=-1)


def _tmax(th):
    k2, k3 = th[..., 1], th[..., 2]
    diff = k3 - k2
    safe = np.where(np.abs(diff) > 1e-12, diff, 1.0)
    return np.where(np.abs(diff) > 1e-12, (np.log(k3) - np.log(k2)) / safe, 1 / k2)


def _tmax_grad(th):
    k2, k3 = th[..., 1], th[..., 2]
    diff = k3 - k2
    L = np.log(k3) - np.log(k2)
    d2 = -1 / (k2 * diff) + L / diff ** 2
    d3 = 1 / (k3 * diff) - L / diff ** 2
    return np.stack([np.zeros_like(k2), d2, d3], axis=-1)


def _cmax(th):
    t = _tmax(th)
    return th[..., 0] * (np.exp(-th[..., 1] * t) - np.exp(-th[..., 2] * t))


def _cmax_grad(th):
    # d eta / dx vanishes at the time of maximum, so only the parameter
    # derivative of eta at x = tmax remains
    t = _tmax(th)
    a = th[..., 0]
    e2, e3 = np.exp(-th[..., 1] * t), np.exp(-th[..., 2] * t)
    return np.stack([e2 - e3, -a * t * e2, a * t * e3], axis=-1)


_FUNCTIONALS = {
    ("pk1", "auc"): ScalarFunctional("auc", _auc, _auc_grad),
    ("pk1", "tmax"): ScalarFunctional("tmax", _tmax, _tmax_grad),
    ("pk1", "cmax"): ScalarFunctional("cmax", _cmax, _cmax_grad),
}


def builtin_functional(model_name: str, name: str) -> ScalarFunctional:
    try:
        return _FUNCTIONALS[(model_name, name)]
    except KeyError:
        known = sorted(n for m, n in _FUNCTIONALS if m == model_name)
        raise RegistryError(f"no functional {name!r} for model {model_name!r}; available: {known}") from None


def linear_functional(c) -> ScalarFunctional:
    c = np.asarray(c, dtype=float)
    return ScalarFunctional("linear", lambda th: th @ c,
                            lambda th: np.broadcast_to(c, np.shape(th)).copy())


# --- criterion specification ----------------------------------------------

@dataclass(frozen=True)
class CriterionSpec:
    """Which criterion to evaluate and its fixed ingredients.

    ``design_space`` holds the finite set over which the eG denominator is
    maximised.  For worst-case criteria ``anchors`` optionally restricts
    ``theta0`` to a finite set; otherwise ``theta0`` ranges over the whole
    parameter domain.
    """

    kind: str
    theta0: Optional[np.ndarray] = None
    K: float = 0.0
    worst_case: bool = False
    functional: Optional[ScalarFunctional] = None
    exclusion_radius: Optional[float] = None
    design_space: Optional[np.ndarray] = None
    anchors: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown criterion kind {self.kind!r}")
        if not (self.K >= 0):
            raise ConfigError("K must be nonnegative")
        if self.kind in ("ec", "c") and self.functional is None:
            raise ConfigError(f"criterion {self.kind} needs a functional")
        if self.worst_case:
            if self.theta0 is not None:
                raise ConfigError("worst-case criteria take no theta0")
            if self.kind not in EXTENDED:
                raise ConfigError("worst-case variants exist for extended criteria only")
        elif self.theta0 is None:
            raise ConfigError("theta0 is required")
        if self.exclusion_radius is not None and not self.exclusion_radius > 0:
            raise ConfigError("exclusion radius must be positive")
        if self.theta0 is not None:
            object.__setattr__(self, "theta0", np.asarray(self.theta0, dtype=float).ravel())
        if self.design_space is not None:
            ds = np.asarray(self.design_space, dtype=float)
            object.__setattr__(self, "design_space", ds[:, None] if ds.ndim == 1 else ds)
        if self.anchors is not None:
            object.__setattr__(self, "anchors", np.atleast_2d(np.asarray(self.anchors, dtype=float)))

    def with_theta0(self, theta0) -> "CriterionSpec":
        return replace(self, theta0=np.asarray(theta0, dtype=float), worst_case=False, anchors=None)


@dataclass(frozen=True)
class Candidate:
    """Constraint index: a parameter point, or a direction limit at ``theta0``."""

    theta: np.ndarray
    theta0: np.ndarray
    direction: Optional[np.ndarray] = None
    x_star: Optional[np.ndarray] = None

    @property
    def is_limit(self) -> bool:
        return self.direction is not None

    def to_dict(self) -> dict:
        out = {"theta": self.theta.tolist(), "theta0": self.theta0.tolist()}
        if self.direction is not None:
            out["direction"] = self.direction.tolist()
        if self.x_star is not None:
            out["x_star"] = self.x_star.tolist()
        return out


@dataclass
class CriterionValue:
    value: float
    argmin: Optional[Candidate]
    near_boundary_flag: bool = False
    candidates: List[Candidate] = field(default_factory=list)
    candidate_values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def argmin_theta(self):
        return None if self.argmin is None else self.argmin.theta

    @property
    def argmin_theta0(self):
        return None if self.argmin is None else self.argmin.theta0

    @property
    def argmin_x(self):
        return None if self.argmin is None else self.argmin.x_star


@dataclass
class ActiveSet:
    points: List[Candidate]
    values: np.ndarray
    phi: float


def active_tolerance(phi: float) -> float:
    return max(1e-8, 1e-6 * abs(phi))


# --- rows -------------------------------------------------------------------

def _as_points(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return X[:, None] if X.ndim == 1 else X


def point_rows(spec: CriterionSpec, model: RegressionModel, X, thetas, theta0s,
               return_xstar: bool = False):
    """Rows ``h_i(theta)`` for parameter points; vacuous rows are ``inf``.

    ``theta0s`` is one anchor or one anchor per parameter point.
    """
    X = _as_points(X)
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    theta0s = np.asarray(theta0s, dtype=float)
    dev = model.deviation(X, thetas, theta0s)
    num = dev ** 2
    anchors = np.broadcast_to(theta0s, thetas.shape)
    xstar = None
    if spec.kind == "eE":
        den = np.sum((thetas - anchors) ** 2, axis=1)
    elif spec.kind == "ec":
        g = spec.functional
        den = (g.value(thetas) - g.value(anchors)) ** 2
    elif spec.kind == "eG":
        Z = X if spec.design_space is None else spec.design_space
        devZ = dev if Z is X or (Z.shape == X.shape and np.array_equal(Z, X)) \
            else model.deviation(Z, thetas, theta0s)
        sq = devZ ** 2
        idx = np.argmax(sq, axis=1)
        den = sq[np.arange(len(idx)), idx]
        xstar = Z[idx]
    else:
        raise ConfigError(f"rows are defined for extended criteria, not {spec.kind!r}")
    den = np.broadcast_to(den, (thetas.shape[0],))
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(den > 0, spec.K + 1.0 / np.where(den > 0, den, 1.0), np.inf)
        rows = num * factor[:, None]
    rows[~np.isfinite(factor)] = np.inf
    if return_xstar:
        return rows, xstar
    return rows


def limit_rows(spec: CriterionSpec, model: RegressionModel, X, theta0, directions) -> np.ndarray:
    """Rows of the limit of ``h_i(theta0 + s u)`` as ``s -> 0``."""
    X = _as_points(X)
    U = np.atleast_2d(np.asarray(directions, dtype=float))
    J = np.broadcast_to(model.jac(X, np.asarray(theta0, dtype=float)), (len(X), model.p))
    num = (U @ J.T) ** 2
    if spec.kind == "eE":
        den = np.sum(U ** 2, axis=1)
    elif spec.kind == "ec":
        c = spec.functional.grad(theta0)
        den = (U @ c) ** 2
    elif spec.kind == "eG":
        Z = X if spec.design_space is None else spec.design_space
        JZ = np.broadcast_to(model.jac(Z, np.asarray(theta0, dtype=float)), (len(Z), model.p))
        den = np.max((U @ JZ.T) ** 2, axis=1)
    else:
        raise ConfigError(f"rows are defined for extended criteria, not {spec.kind!r}")
    with np.errstate(divide="ignore", invalid="ignore"):
        rows = np.where(den[:, None] > 0, num / np.where(den > 0, den, 1.0)[:, None], np.inf)
    return rows


def candidate_rows(spec: CriterionSpec, model: RegressionModel, X,
                   cands: Sequence[Candidate]) -> np.ndarray:
    X = _as_points(X)
    out = np.empty((len(cands), len(X)))
    pts = [k for k, c in enumerate(cands) if not c.is_limit]
    lims = [k for k, c in enumerate(cands) if c.is_limit]
    if pts:
        thetas = np.array([cands[k].theta for k in pts])
        anchors = np.array([cands[k].theta0 for k in pts])
        out[pts] = point_rows(spec, model, X, thetas, anchors)
    for k in lims:
        out[k] = limit_rows(spec, model, X, cands[k].theta0, cands[k].direction)[0]
    return out


def _candidate(spec: CriterionSpec, theta, theta0=None) -> Candidate:
    theta = np.asarray(theta, dtype=float).ravel()
    theta0 = spec.theta0 if theta0 is None else np.asarray(theta0, dtype=float).ravel()
    if theta0 is None:
        raise ConfigError("an anchor theta0 is required")
    return Candidate(theta, theta0)


def h_ratio(spec: CriterionSpec, model: RegressionModel, x, theta, theta0=None) -> float:
    """Single-point ratio ``h(x, theta)``; raises :class:`VacuousConstraint` at a zero denominator."""
    cand = _candidate(spec, theta, theta0)
    if spec.kind == "eG" and spec.design_space is None:
        raise ConfigError("eG ratios need a design space")
    row = candidate_rows(spec, model, np.atleast_2d(np.asarray(x, dtype=float)), [cand])[0]
    if not np.isfinite(row[0]):
        raise VacuousConstraint(f"zero denominator at theta={cand.theta}")
    return float(row[0])


def H_value(spec: CriterionSpec, model: RegressionModel, xi: DesignMeasure, theta,
            theta0_override=None) -> float:
    """``sum_i w_i h_i(theta)``; the eG denominator defaults to the support of ``xi``."""
    cand = _candidate(spec, theta, theta0_override)
    row = candidate_rows(spec, model, xi.support, [cand])[0]
    if not np.all(np.isfinite(row)):
        raise VacuousConstraint(f"zero denominator at theta={cand.theta}")
    return float(row @ xi.weights)


def candidate_values(spec, model, xi: DesignMeasure, cands) -> np.ndarray:
    rows = candidate_rows(spec, model, xi.support, cands)
    with np.errstate(invalid="ignore"):
        vals = np.where(np.all(np.isfinite(rows), axis=1), np.nan_to_num(rows, posinf=0.0) @ xi.weights, np.inf)
    return vals


# --- classical criteria -----------------------------------------------------

def generalized_inverse(M: np.ndarray) -> np.ndarray:
    """Symmetric generalised inverse with a relative eigenvalue cutoff."""
    vals, vecs = np.linalg.eigh(0.5 * (M + M.T))
    cut = GINV_CUTOFF * max(float(vals[-1]), 0.0)
    inv = np.where(vals > cut, 1.0 / np.where(vals > cut, vals, 1.0), 0.0)
    return (vecs * inv) @ vecs.T


def c_value(M: np.ndarray, c: np.ndarray, estimability_tol: float = ESTIMABILITY_TOL) -> float:
    """``[c^T M^- c]^{-1}``, or 0 when ``c`` is not in the range of ``M``.

    ``c`` counts as in the range when ``||(I - M M^-) c|| <= estimability_tol * ||c||``.
    """
    Mg = generalized_inverse(M)
    resid = c - M @ (Mg @ c)
    if np.linalg.norm(resid) > estimability_tol * max(np.linalg.norm(c), 1e-300):
        return 0.0
    q = float(c @ Mg @ c)
    return 1.0 / q if q > 0 else 0.0


def classical_value(kind: str, model: RegressionModel, xi: DesignMeasure, theta0,
                    functional: Optional[ScalarFunctional] = None, design_space=None,
                    estimability_tol: float = ESTIMABILITY_TOL) -> float:
    M = info_matrix(model, xi, theta0)
    if kind == "E":
        return min_eigen(M)[0]
    if kind == "D":
        det = np.linalg.det(M)
        return float(max(det, 0.0) ** (1.0 / model.p))
    if kind == "c":
        if functional is None:
            raise ConfigError("c-optimality needs a functional")
        return c_value(M, functional.grad(np.asarray(theta0, dtype=float)), estimability_tol)
    if kind == "G":
        Z = xi.support if design_space is None else _as_points(design_space)
        Mg = generalized_inverse(M)
        J = np.broadcast_to(model.jac(Z, np.asarray(theta0, dtype=float)), (len(Z), model.p))
        if np.linalg.matrix_rank(M) < model.p:
            return 0.0
        var = np.einsum("ij,jk,ik->i", J, Mg, J)
        return float(1.0 / var.max())
    raise ConfigError(f"{kind!r} is not a classical criterion")


def limit_candidate(spec: CriterionSpec, model: RegressionModel, xi_support, weights, theta0=None):
    """Infimum contribution of ``theta -> theta0`` (eE and ec only), or ``None``.

    Returns ``(candidate, value)``; the value is ``lambda_min(M)`` for eE and
    ``[c^T M^- c]^{-1}`` for ec.
    """
    if spec.kind not in ("eE", "ec"):
        return None
    theta0 = spec.theta0 if theta0 is None else theta0
    xi = DesignMeasure(_as_points(xi_support), np.asarray(weights, dtype=float))
    M = info_matrix(model, xi, theta0)
    if spec.kind == "eE":
        value, u = min_eigen(M)
    else:
        c = spec.functional.grad(theta0)
        Mg = generalized_inverse(M)
        resid = c - M @ (Mg @ c)
        if np.linalg.norm(resid) > ESTIMABILITY_TOL * np.linalg.norm(c):
            u, value = resid, 0.0
        else:
            u = Mg @ c
            value = c_value(M, c)
        u = u / np.linalg.norm(u)
    return Candidate(np.array(theta0, dtype=float), np.array(theta0, dtype=float), direction=u), max(value, 0.0)


# --- evaluation over a parameter domain -------------------------------------------

# local polishes per inner minimisation; narrow valleys of H (basin radius a few
# hundredths of the box) are missed by fewer starts on a 10k-point grid
DEFAULT_POLISHES = 16

def _finite_candidates(spec: CriterionSpec, domain: FiniteSet) -> List[Candidate]:
    pts = domain.points
    if not spec.worst_case:
        return [Candidate(t, spec.theta0) for t in pts if not np.array_equal(t, spec.theta0)]
    anchors = pts if spec.anchors is None else spec.anchors
    return [Candidate(t, a) for a in anchors for t in pts if not np.array_equal(t, a)]


def evaluate_phi(spec: CriterionSpec, model: RegressionModel, xi: DesignMeasure, domain,
                 grid=None, n_starts: int = DEFAULT_POLISHES) -> CriterionValue:
    """Minimum of ``H(xi, .)`` over the parameter domain.

    Finite domains are enumerated exactly.  Box domains use a space-filling
    grid followed by local polishing from the ``n_starts`` best discrete local
    minima of the grid values, plus the ``theta -> theta0`` limit for eE and ec.
    """
    if spec.kind not in EXTENDED:
        raise ConfigError(f"evaluate_phi handles extended criteria; use classical_value for {spec.kind}")
    if spec.kind == "eG" and spec.design_space is None:
        spec = replace(spec, design_space=xi.support)
    if isinstance(domain, FiniteSet):
        cands = _finite_candidates(spec, domain)
        vals = candidate_values(spec, model, xi, cands)
        ok = np.isfinite(vals)
        if not np.any(ok):
            raise ConfigError("no admissible parameter in the finite domain")
        cands = [c for c, good in zip(cands, ok) if good]
        vals = vals[ok]
        if spec.kind == "eG":
            _, xs = point_rows(spec, model, xi.support, np.array([c.theta for c in cands]),
                               np.array([c.theta0 for c in cands]), return_xstar=True)
            cands = [replace(c, x_star=x) for c, x in zip(cands, xs)]
        k = int(np.argmin(vals))
        return CriterionValue(float(vals[k]), cands[k], False, cands, vals)
    if spec.worst_case and spec.anchors is not None:
        best = None
        for a in spec.anchors:
            res = evaluate_phi(spec.with_theta0(a), model, xi, domain, grid, n_starts)
            if best is None or res.value < best.value:
                best = res
        return best
    from .search import ParameterSearch
    search = ParameterSearch(spec, model, xi.support, domain, grid)
    return search.evaluate(xi.weights, n_starts=n_starts)


def active_set(value: CriterionValue, delta: Optional[float] = None) -> ActiveSet:
    delta = active_tolerance(value.value) if delta is None else delta
    keep = [k for k, v in enumerate(value.candidate_values) if v <= value.value + delta]
    if not keep:
        raise ConfigError("empty active set")
    return ActiveSet([value.candidates[k] for k in keep], value.candidate_values[keep], value.value)


def directional_derivative(spec: CriterionSpec, model: RegressionModel, xi: DesignMeasure,
                           nu: DesignMeasure, active: ActiveSet) -> float:
    """``min over active candidates of H(nu, .) - phi(xi)``."""
    if not active.points:
        raise ConfigError("empty active set")
    if spec.kind == "eG" and spec.design_space is None:
        raise ConfigError("eG directional derivatives need the design space")
    h_nu = candidate_values(spec, model, nu, active.points)
    return float(np.min(h_nu) - active.phi)


def psi_matrix(spec: CriterionSpec, model: RegressionModel, xi: DesignMeasure, X,
               active: ActiveSet) -> np.ndarray:
    """``Psi(x, theta_j, xi) = h_x(theta_j) - H(xi, theta_j)`` on design points ``X``."""
    rows = candidate_rows(spec, model, X, active.points)
    h_xi = candidate_values(spec, model, xi, active.points)
    return (rows - h_xi[:, None]).T


def optimality_certificate(spec: CriterionSpec, model: RegressionModel, xi: DesignMeasure, X,
                           active: ActiveSet) -> float:
    """``min_mu max_x sum_j mu_j Psi(x, theta_j, xi)``; nonpositive at an optimum."""
    if not active.points:
        raise ConfigError("empty active set")
    if spec.kind == "eG" and spec.design_space is None:
        spec = replace(spec, design_space=_as_points(X))
    psi = psi_matrix(spec, model, xi, _as_points(X), active)
    if psi.shape[1] == 1:
        return float(psi[:, 0].max())
    _, value = solve_minmax_measure(psi)
    return value

"""Simulated observations, multistart least squares and the localisation radius."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import least_squares

from .design import DesignMeasure, validate_design
from .errors import ConfigError, NumericError
from .models import Box, RegressionModel
from .search import DEFAULT_SEED, lhs_sample, parallel_map


class UnboundedRadius(NumericError):
    """The criterion value is zero, so least squares is not localised at all."""


@dataclass
class ObservationSet:
    """Observations ``y_i`` at design points ``X[i]`` (replications repeat rows)."""

    X: np.ndarray
    y: np.ndarray
    sigma: float = 0.0
    seed: Optional[int] = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        self.X = X[:, None] if X.ndim == 1 else X
        self.y = np.asarray(self.y, dtype=float).ravel()
        if len(self.X) != len(self.y):
            raise ConfigError(f"{len(self.X)} design points but {len(self.y)} observations")
        if not self.sigma >= 0:
            raise ConfigError("sigma must be nonnegative")

    @property
    def n(self) -> int:
        return len(self.y)

    def to_dict(self) -> dict:
        x = self.X[:, 0].tolist() if self.X.shape[1] == 1 else self.X.tolist()
        return {"x": x, "y": self.y.tolist(), "sigma": self.sigma, "seed": self.seed}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "ObservationSet":
        unknown = set(data) - {"x", "y", "sigma", "seed"}
        if unknown:
            raise ConfigError(f"unknown observation keys {sorted(unknown)}")
        return cls(data["x"], data["y"], data.get("sigma", 0.0), data.get("seed"))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"x{i + 1}" for i in range(self.X.shape[1])] + ["y"])
        for x, y in zip(self.X, self.y):
            writer.writerow([repr(float(v)) for v in x] + [repr(float(y))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ObservationSet":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], [r for r in rows[1:] if r]
        if not header or header[-1].strip() != "y":
            raise ConfigError("observation CSV needs columns x..., y")
        data = np.array(body, dtype=float)
        return cls(data[:, :-1], data[:, -1])


@dataclass
class FitResult:
    theta_hat: np.ndarray
    residual_norm: float
    local_minima: List[Tuple[np.ndarray, float]] = field(default_factory=list)
    global_flag: bool = False
    n_starts: int = 0

    def to_dict(self) -> dict:
        return {"theta_hat": self.theta_hat.tolist(), "residual_norm": self.residual_norm,
                "local_minima": [{"theta": t.tolist(), "residual_norm": r} for t, r in self.local_minima],
                "global_flag": self.global_flag, "n_starts": self.n_starts}


def simulate_observations(model: RegressionModel, X, theta_bar, sigma: float,
                          seed: int = DEFAULT_SEED) -> ObservationSet:
    """``y_i = eta(x_i, theta_bar) + sigma z_i`` with seeded standard normal ``z_i``."""
    if not sigma >= 0:
        raise ConfigError("sigma must be nonnegative")
    X = np.asarray(X, dtype=float)
    X = X[:, None] if X.ndim == 1 else X
    mean = np.broadcast_to(model.eta(X, np.asarray(theta_bar, dtype=float)), (len(X),))
    z = np.random.default_rng(seed).standard_normal(len(X))
    return ObservationSet(X, mean + sigma * z, float(sigma), seed)


def replicate_design(xi: DesignMeasure, counts) -> np.ndarray:
    """Design points of an exact design: support point ``i`` repeated ``counts[i]`` times."""
    counts = np.asarray(counts, dtype=int)
    if counts.shape != (xi.size,) or np.any(counts < 0):
        raise ConfigError("one nonnegative count per support point is required")
    return np.repeat(xi.support, counts, axis=0)


def empirical_design(X) -> DesignMeasure:
    """Empirical measure of the rows of ``X`` (replications become weights)."""
    X = np.asarray(X, dtype=float)
    X = X[:, None] if X.ndim == 1 else X
    return validate_design(X, np.full(len(X), 1.0 / len(X)))


def _fit_from(model, obs, box, start):
    lo, hi = box.lower, box.upper

    def resid(theta):
        return np.broadcast_to(model.eta(obs.X, theta), (obs.n,)) - obs.y

    def jac(theta):
        return np.broadcast_to(model.jac(obs.X, theta), (obs.n, model.p))

    try:
        res = least_squares(resid, np.clip(start, lo, hi), jac=jac, bounds=(lo, hi), method="trf",
                            xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
    except (ValueError, FloatingPointError, np.linalg.LinAlgError):
        return None
    if not np.all(np.isfinite(res.fun)):
        return None
    return res.x, float(np.linalg.norm(res.fun))


def ls_fit_multistart(model: RegressionModel, obs: ObservationSet, box: Box, n_starts: int = 50,
                      seed: int = DEFAULT_SEED, threads: int = 1, extra_starts=None) -> FitResult:
    """Bound-constrained least squares from ``n_starts`` Latin hypercube starts.

    Converged points within ``1e-4 * diam(box)`` of each other form one local
    minimum; minima are sorted by residual norm.  ``global_flag`` is set when
    the best minimum was reached from at least two starts.  ``extra_starts``
    are tried in addition to the Latin hypercube starts.
    """
    if n_starts < 1:
        raise ConfigError("n_starts must be at least 1")
    starts = lhs_sample(box, n_starts, seed)
    if extra_starts is not None:
        starts = np.vstack([starts, np.atleast_2d(np.asarray(extra_starts, dtype=float))])
    fits = [f for f in parallel_map(lambda s: _fit_from(model, obs, box, s), list(starts), threads) if f]
    if not fits:
        raise NumericError("every least-squares start failed")
    fits.sort(key=lambda f: f[1])
    radius = 1e-4 * box.diameter
    minima: List[Tuple[np.ndarray, float]] = []
    hits: List[int] = []
    for theta, r in fits:
        for k, (t0, _) in enumerate(minima):
            if np.linalg.norm(theta - t0) <= radius:
                hits[k] += 1
                break
        else:
            minima.append((theta, r))
            hits.append(1)
    best, rbest = minima[0]
    return FitResult(best, rbest, minima, hits[0] >= 2, n_starts)


def localization_radius(model: RegressionModel, xi_N: Optional[DesignMeasure], theta,
                        obs: ObservationSet, phi_eE_value: float) -> float:
    """``2 ||y - eta_X(theta)|| / (sqrt(N) sqrt(phi))``.

    Least squares over the parameter domain then lies in the ball of this
    radius around ``theta`` whenever ``phi`` is the extended E value of the
    empirical measure ``xi_N`` of the observation points.
    """
    if phi_eE_value < 0 or not np.isfinite(phi_eE_value):
        raise ConfigError("criterion value must be finite and nonnegative")
    if xi_N is not None:
        emp = empirical_design(obs.X)
        if emp.size != xi_N.size or not np.allclose(np.sort(emp.support, axis=0),
                                                     np.sort(xi_N.support, axis=0)):
            raise ConfigError("design measure does not match the observation points")
    resid = np.broadcast_to(model.eta(obs.X, np.asarray(theta, dtype=float)), (obs.n,)) - obs.y
    norm = float(np.linalg.norm(resid))
    if phi_eE_value == 0:
        raise UnboundedRadius("criterion value is zero: the estimator is not localised")
    return 2.0 * norm / (math.sqrt(obs.n) * math.sqrt(phi_eE_value))

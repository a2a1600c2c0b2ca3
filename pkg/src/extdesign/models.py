"""Regression models, parameter domains and the built-in model registry.

Model callables are vectorised: ``response(x, theta)`` receives ``x`` with
shape ``(..., d)`` and ``theta`` with shape ``(..., p)`` whose leading
dimensions broadcast against each other, and returns an array of the
broadcast leading shape.  ``jacobian`` appends a trailing ``p`` axis and
``hessian`` two trailing ``p`` axes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ModelError, NumericError, RegistryError

ArrayFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def fd_step(theta: np.ndarray) -> np.ndarray:
    """Central-difference step, scale aware per coordinate."""
    return np.maximum(1e-6, 1e-6 * np.abs(theta))


@dataclass(frozen=True)
class RegressionModel:
    """Response ``eta(x, theta)`` with optional analytic derivatives."""

    name: str
    p: int
    d: int
    response: ArrayFn
    jacobian_fn: Optional[ArrayFn] = None
    hessian_fn: Optional[ArrayFn] = None
    x_lower: Optional[tuple] = None
    x_upper: Optional[tuple] = None
    params: dict = field(default_factory=dict)

    # batch evaluation -------------------------------------------------
    def eta(self, x, theta) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        theta = np.asarray(theta, dtype=float)
        return np.asarray(self.response(x, theta), dtype=float)

    def jac(self, x, theta) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        theta = np.asarray(theta, dtype=float)
        if self.jacobian_fn is not None:
            return np.asarray(self.jacobian_fn(x, theta), dtype=float)
        return _fd_jacobian(self.response, x, theta)

    def hess(self, x, theta) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        theta = np.asarray(theta, dtype=float)
        if self.hessian_fn is not None:
            return np.asarray(self.hessian_fn(x, theta), dtype=float)
        if self.jacobian_fn is not None:
            H = _fd_jacobian(self.jacobian_fn, x, theta, trailing=1)
        else:
            H = _fd_hessian(self.response, x, theta)
        return 0.5 * (H + np.swapaxes(H, -1, -2))

    def deviation(self, X, thetas, theta0) -> np.ndarray:
        """``eta(x_i, theta_j) - eta(x_i, theta0)`` as a ``(k, n)`` array.

        ``theta0`` is either one anchor or one anchor per row of ``thetas``.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        theta0 = np.asarray(theta0, dtype=float)
        e = self.eta(X[None, :, :], thetas[:, None, :])
        e0 = self.eta(X[None, :, :], theta0[:, None, :] if theta0.ndim == 2 else theta0)
        return e - e0


def _fd_jacobian(fn: ArrayFn, x, theta, trailing: int = 0, rel_step: float = 1e-6) -> np.ndarray:
    """Central differences of ``fn`` in ``theta``; new axis appended last.

    ``trailing`` is the number of trailing axes of ``fn``'s output that do
    not take part in broadcasting (1 when differencing a jacobian).
    """
    theta = np.asarray(theta, dtype=float)
    p = theta.shape[-1]
    h = np.maximum(rel_step, rel_step * np.abs(theta))
    cols = []
    for i in range(p):
        step = np.zeros_like(theta)
        step[..., i] = h[..., i]
        diff = np.asarray(fn(x, theta + step), dtype=float) - np.asarray(fn(x, theta - step), dtype=float)
        hi = h[..., i].reshape(h.shape[:-1] + (1,) * trailing)
        cols.append(diff / (2.0 * hi))
    return np.stack(cols, axis=-1)


def _fd_hessian(fn: ArrayFn, x, theta) -> np.ndarray:
    # nested central differences lose about eps / h^2, so a larger step balances truncation
    def grad(xx, tt):
        return _fd_jacobian(fn, xx, tt, rel_step=1e-4)
    return _fd_jacobian(grad, x, theta, trailing=1, rel_step=1e-4)


# --- parameter domains -----------------------------------------------------

@dataclass(frozen=True)
class Box:
    """Rectangular parameter domain."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        if lo.shape != hi.shape:
            raise ModelError("box bounds have different lengths")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ModelError("box bounds must be finite")
        if np.any(lo > hi):
            raise ModelError("box lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    def contains(self, theta, tol: float = 0.0) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.lower - tol) and np.all(theta <= self.upper + tol))

    def to_unit(self, theta):
        width = np.where(self.upper > self.lower, self.upper - self.lower, 1.0)
        return (np.asarray(theta, dtype=float) - self.lower) / width

    def from_unit(self, z):
        return self.lower + np.asarray(z, dtype=float) * (self.upper - self.lower)


@dataclass(frozen=True)
class FiniteSet:
    """Finite parameter domain; members are rows of ``points``."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[0] == 0:
            raise ModelError("finite parameter set is empty")
        if not np.all(np.isfinite(pts)):
            raise ModelError("finite parameter set has non-finite entries")
        if np.unique(pts, axis=0).shape[0] != pts.shape[0]:
            raise ModelError("finite parameter set has duplicate members")
        object.__setattr__(self, "points", pts)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def diameter(self) -> float:
        pts = self.points
        if len(pts) < 2:
            return 0.0
        diff = pts[:, None, :] - pts[None, :, :]
        return float(np.sqrt((diff ** 2).sum(-1)).max())


ParameterDomain = Box | FiniteSet


# --- single-point operations -----------------------------------------------

def _check_point(model: RegressionModel, x, theta):
    x = np.asarray(x, dtype=float).ravel()
    theta = np.asarray(theta, dtype=float).ravel()
    if x.size != model.d:
        raise ModelError(f"design point has dimension {x.size}, model {model.name} expects {model.d}")
    if theta.size != model.p:
        raise ModelError(f"parameter has dimension {theta.size}, model {model.name} expects {model.p}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(theta))):
        raise ModelError("non-finite design point or parameter")
    return x, theta


def eval_response(model: RegressionModel, x, theta) -> float:
    x, theta = _check_point(model, x, theta)
    return float(model.eta(x, theta))


def response_jacobian(model: RegressionModel, x, theta) -> np.ndarray:
    x, theta = _check_point(model, x, theta)
    J = np.asarray(model.jac(x, theta), dtype=float).reshape(model.p)
    if not np.all(np.isfinite(J)):
        raise NumericError(f"non-finite jacobian for model {model.name}")
    return J


def response_hessian(model: RegressionModel, x, theta) -> np.ndarray:
    x, theta = _check_point(model, x, theta)
    H = np.asarray(model.hess(x, theta), dtype=float).reshape(model.p, model.p)
    if not np.all(np.isfinite(H)):
        raise NumericError(f"non-finite hessian for model {model.name}")
    return H


# --- built-in models -------------------------------------------------------

def circle_model(r: float = 1.0) -> RegressionModel:
    """``r cos(t - u theta)`` with design point ``x = (t, u)``."""
    if not r > 0:
        raise ModelError("circle radius must be positive")

    def f(x, th):
        return r * np.cos(x[..., 0] - x[..., 1] * th[..., 0])

    def jac(x, th):
        return (r * x[..., 1] * np.sin(x[..., 0] - x[..., 1] * th[..., 0]))[..., None]

    def hess(x, th):
        u = x[..., 1]
        return (-r * u ** 2 * np.cos(x[..., 0] - u * th[..., 0]))[..., None, None]

    return RegressionModel("circle", 1, 2, f, jac, hess,
                           x_lower=(0.0, 0.0), x_upper=(np.pi / 2, 7 * np.pi / 4),
                           params={"r": float(r)})


def bilinear2d_model() -> RegressionModel:
    """Two-factor model with cubic and quadratic parameter terms on ``[0, 1]^2``."""

    def f(x, th):
        x1, x2 = x[..., 0], x[..., 1]
        a, b = th[..., 0], th[..., 1]
        return a * x1 + a ** 3 * (1 - x1) + b * x2 + b ** 2 * (1 - x2)

    def jac(x, th):
        x1, x2 = x[..., 0], x[..., 1]
        a, b = th[..., 0], th[..., 1]
        d1 = x1 + 3 * a ** 2 * (1 - x1)
        d2 = x2 + 2 * b * (1 - x2)
        d1, d2 = np.broadcast_arrays(d1, d2)
        return np.stack([d1, d2], axis=-1)

    def hess(x, th):
        x1, x2 = x[..., 0], x[..., 1]
        a = th[..., 0]
        h11 = 6 * a * (1 - x1)
        h22 = 2 * (1 - x2)
        h11, h22 = np.broadcast_arrays(h11, h22)
        zero = np.zeros_like(h11)
        return np.stack([np.stack([h11, zero], -1), np.stack([zero, h22], -1)], -2)

    return RegressionModel("bilinear2d", 2, 2, f, jac, hess,
                           x_lower=(0.0, 0.0), x_upper=(1.0, 1.0))


def pk1_model() -> RegressionModel:
    """One-compartment model with first-order absorption."""

    def f(x, th):
        t = x[..., 0]
        return th[..., 0] * (np.exp(-th[..., 1] * t) - np.exp(-th[..., 2] * t))

    def jac(x, th):
        t = x[..., 0]
        a = th[..., 0]
        e2 = np.exp(-th[..., 1] * t)
        e3 = np.exp(-th[..., 2] * t)
        cols = np.broadcast_arrays(e2 - e3, -a * t * e2, a * t * e3)
        return np.stack(cols, axis=-1)

    def hess(x, th):
        t = x[..., 0]
        a = th[..., 0]
        e2 = np.exp(-th[..., 1] * t)
        e3 = np.exp(-th[..., 2] * t)
        h12, h13 = -t * e2, t * e3
        h22, h33 = a * t ** 2 * e2, -a * t ** 2 * e3
        h12, h13, h22, h33 = np.broadcast_arrays(h12, h13, h22, h33)
        z = np.zeros_like(h12)
        rows = [np.stack([z, h12, h13], -1),
                np.stack([h12, h22, z], -1),
                np.stack([h13, z, h33], -1)]
        return np.stack(rows, axis=-2)

    return RegressionModel("pk1", 3, 1, f, jac, hess, x_lower=(0.0,), x_upper=(np.inf,))


def linear_model(features: Callable[[np.ndarray], np.ndarray], p: int, d: int,
                 offset: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                 name: str = "linear") -> RegressionModel:
    """``f(x)^T theta + v(x)``; ``features`` maps ``(..., d)`` to ``(..., p)``."""

    def f(x, th):
        val = np.sum(features(x) * th, axis=-1)
        return val + offset(x) if offset is not None else val

    def jac(x, th):
        F = features(x)
        shape = np.broadcast_shapes(F.shape[:-1], np.shape(th)[:-1]) + (p,)
        return np.broadcast_to(F, shape).copy()

    def hess(x, th):
        shape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(th)[:-1])
        return np.zeros(shape + (p, p))

    return RegressionModel(name, p, d, f, jac, hess)


_REGISTRY = {
    "circle": circle_model,
    "bilinear2d": bilinear2d_model,
    "pk1": pk1_model,
}


def builtin_model(name: str, **params) -> RegressionModel:
    """Look up a built-in model; ``circle`` accepts the radius ``r``."""
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise RegistryError(f"unknown model {name!r}; available: {sorted(_REGISTRY)}") from None
    return factory(**params)


def builtin_names() -> Sequence[str]:
    return tuple(_REGISTRY)

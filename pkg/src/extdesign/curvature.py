"""Parametric, intrinsic and total curvature of a design at a parameter value.

For a direction ``u`` the second-order term ``v_u(x) = u^T H(x, theta) u``
is split by the ``L2(xi)``-orthogonal projector ``P`` onto the span of the
jacobian coordinate functions.  The three measures are the suprema over
``u`` of ``||Q v_u||_xi / u^T M u`` with ``Q = P`` (parametric), ``I - P``
(intrinsic) and ``I`` (total), computed with ``sigma = 1``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .design import DesignMeasure, info_matrix
from .errors import NumericError
from .models import RegressionModel

N_STARTS = 200
TOL = 1e-10
MAX_STEPS = 2000
MIN_STEP = 1e-13
SINGULAR_RCOND = 1e-12


@dataclass
class CurvatureReport:
    C_par: float
    C_int: float
    C_tot: float
    u_par: Optional[np.ndarray] = None
    u_int: Optional[np.ndarray] = None
    u_tot: Optional[np.ndarray] = None
    singular: bool = False

    def to_dict(self) -> dict:
        def vec(u):
            return None if u is None else u.tolist()
        return {"C_par": self.C_par, "C_int": self.C_int, "C_tot": self.C_tot,
                "u_par": vec(self.u_par), "u_int": vec(self.u_int), "u_tot": vec(self.u_tot),
                "singular": self.singular}


def _support_jacobian(model, xi, theta):
    theta = np.asarray(theta, dtype=float)
    return np.broadcast_to(model.jac(xi.support, theta), (xi.size, model.p))


def _is_singular(M: np.ndarray) -> bool:
    vals = np.linalg.eigvalsh(M)
    return vals[0] <= SINGULAR_RCOND * max(vals[-1], 0.0) or vals[-1] <= 0


def projector_matrix(model: RegressionModel, xi: DesignMeasure, theta,
                     generalized: bool = False) -> np.ndarray:
    """Matrix of ``P`` acting on value vectors over the support: ``J M^{-1} J^T W``."""
    J = _support_jacobian(model, xi, theta)
    M = info_matrix(model, xi, theta)
    if _is_singular(M):
        if not generalized:
            raise NumericError("singular information matrix; pass generalized=True")
        Minv = np.linalg.pinv(M, rcond=1e-10, hermitian=True)
    else:
        Minv = np.linalg.inv(M)
    return J @ Minv @ (J.T * xi.weights)


def tangent_project(model: RegressionModel, xi: DesignMeasure, theta,
                    f: Union[Callable, np.ndarray], generalized: bool = False) -> np.ndarray:
    """Values on the support of the projection of ``f`` onto the jacobian span."""
    if callable(f):
        values = np.array([f(x) for x in xi.support], dtype=float)
    else:
        values = np.asarray(f, dtype=float).ravel()
    if values.size != xi.size:
        raise NumericError("function values do not match the support size")
    return projector_matrix(model, xi, theta, generalized) @ values


def _sign_normalize(U: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(U) > 1e-12, axis=1)
    signs = np.sign(U[np.arange(len(U)), idx])
    signs[signs == 0] = 1.0
    return U * signs[:, None]


def _ascend(Hs, Q, w, M, U0):
    """Batched projected-gradient ascent of ``||Q v_u||_w / u^T M u`` on the unit sphere."""
    U = U0 / np.linalg.norm(U0, axis=1, keepdims=True)

    def ratio(U):
        V = np.einsum("ipq,sp,sq->si", Hs, U, U)
        A = V @ Q.T
        N = np.sqrt(np.maximum((A ** 2 * w).sum(axis=1), 0.0))
        D = np.einsum("sp,pq,sq->s", U, M, U)
        return N / D, A, N, D

    R, A, N, D = ratio(U)
    step = np.ones(len(U))
    active = np.ones(len(U), dtype=bool)
    for _ in range(MAX_STEPS):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        Ua, Aa, Na, Da = U[idx], A[idx], N[idx], D[idx]
        G = 2.0 * np.einsum("ipq,sq->sip", Hs, Ua)
        dA = np.einsum("jn,snp->sjp", Q, G)
        safeN = np.where(Na > 0, Na, 1.0)
        dN = np.einsum("sj,sjp->sp", Aa * w, dA) / safeN[:, None]
        grad = dN / Da[:, None] - (Na / Da ** 2)[:, None] * 2.0 * (Ua @ M)
        grad -= np.sum(grad * Ua, axis=1, keepdims=True) * Ua
        gnorm = np.linalg.norm(grad, axis=1)
        trial = Ua + step[idx, None] * grad / np.where(gnorm > 0, gnorm, 1.0)[:, None]
        trial /= np.linalg.norm(trial, axis=1, keepdims=True)
        Rt, At, Nt, Dt = ratio(trial)
        better = Rt > R[idx]
        up = idx[better]
        U[up], R[up], A[up], N[up], D[up] = trial[better], Rt[better], At[better], Nt[better], Dt[better]
        step[up] = np.minimum(step[up] * 2.0, 1.0)
        down = idx[~better]
        step[down] *= 0.5
        # a small accepted gain after step halving is not convergence; only a vanishing
        # tangential gradient or step ends the ascent
        done = (gnorm <= TOL * np.maximum(R[idx], 1e-300)) | (step[idx] < MIN_STEP) | (gnorm == 0)
        active[idx[done]] = False
    return U, R


def _supremum(Hs, Q, w, M, starts):
    U, R = _ascend(Hs, Q, w, M, starts)
    U = _sign_normalize(U)
    best = R.max()
    # deterministic tie-break among near-equal maxima: lexicographically largest direction
    ties = np.flatnonzero(R >= best - 1e-12 * max(1.0, best))
    order = sorted(ties, key=lambda k: tuple(-U[k]))
    k = order[0]
    return float(R[k]), U[k]


def curvature_measures(model: RegressionModel, xi: DesignMeasure, theta,
                       n_starts: int = N_STARTS, seed: int = 0) -> CurvatureReport:
    """``C_par``, ``C_int`` and ``C_tot`` by multistart ascent on the unit sphere.

    The ascent runs in whitened coordinates ``v = L^T u`` with
    ``M = L L^T``, from ``n_starts`` seeded random directions plus the
    coordinate axes.  A singular ``M`` gives infinite curvatures.
    """
    theta = np.asarray(theta, dtype=float)
    M = info_matrix(model, xi, theta)
    if _is_singular(M):
        inf = float("inf")
        return CurvatureReport(inf, inf, inf, singular=True)
    p = model.p
    Hs = np.broadcast_to(model.hess(xi.support, theta), (xi.size, p, p))
    if not np.all(np.isfinite(Hs)):
        raise NumericError("non-finite hessian in curvature computation")
    P = projector_matrix(model, xi, theta)
    # whiten with M = L L^T: u = L^{-T} v turns u^T M u into |v|^2, which keeps the
    # ascent well conditioned when M is
    Linv = np.linalg.inv(np.linalg.cholesky(M))
    Hw = np.einsum("ab,ibc,dc->iad", Linv, Hs, Linv)
    rng = np.random.default_rng(seed)
    starts = np.vstack([rng.standard_normal((n_starts, p)), np.eye(p)])
    w = xi.weights
    eye = np.eye(xi.size)
    out = []
    for Q in (P, eye - P, eye):
        value, v = _supremum(Hw, Q, w, np.eye(p), starts)
        u = Linv.T @ v
        out.append((value, _sign_normalize((u / np.linalg.norm(u))[None, :])[0]))
    (c_par, u_par), (c_int, u_int), (c_tot, u_tot) = out
    return CurvatureReport(c_par, c_int, c_tot, u_par, u_int, u_tot)

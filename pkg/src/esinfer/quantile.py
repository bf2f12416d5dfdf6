"""First step: linear quantile regression by pinball-loss minimization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConvergenceError, InputError, SingularDesignError
from .model import Dataset, Tail, TauLevel

# Relative slack allowed on the subgradient certificate of a basic solution.
_CERT_TOL = 1e-9


@dataclass(frozen=True)
class QuantileFit:
    """Quantile regression fit.

    ``basis`` lists the observations interpolated by the returned basic
    solution; their residuals are stored as exact zeros. It is empty when the
    interior-point limit could not be polished to a vertex.
    """

    theta_q: np.ndarray
    residuals: np.ndarray
    iterations: int
    converged: bool
    objective: float
    duality_gap: float
    basis: tuple[int, ...] = ()


def pinball_objective(residuals, tau: float) -> float:
    r = np.asarray(residuals, dtype=float)
    return float(np.sum(r * (tau - (r < 0.0))))


def _check_rank(X):
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise SingularDesignError(f"design matrix is rank deficient ({X.shape[1]} columns)")


def _polish(X, y, tau, coef):
    """Snap an interior-point solution to the nearby basic solution.

    Returns ``(coef, residuals, basis, certified)`` or ``None`` when the
    candidate basis is singular.
    """
    n, p = X.shape
    r = y - X @ coef
    basis = np.sort(np.argsort(np.abs(r), kind="stable")[:p])
    Xh = X[basis]
    if np.linalg.cond(Xh) > 1e12:
        return None
    b = np.linalg.solve(Xh, y[basis])
    res = y - X @ b
    res[basis] = 0.0
    mask = np.ones(n, dtype=bool)
    mask[basis] = False
    psi = tau - (res[mask] < 0.0)
    a = np.linalg.solve(Xh.T, -(X[mask].T @ psi))
    certified = bool(np.all(a >= tau - 1.0 - _CERT_TOL) and np.all(a <= tau + _CERT_TOL))
    return b, res, tuple(int(i) for i in basis), certified


def fit_quantile(data: Dataset, tau: TauLevel, *, tol: float = 1e-8,
                 max_iter: int = 200) -> QuantileFit:
    """Minimize the pinball loss of ``y - X theta`` at level ``tau``.

    The interior-point iterate is polished to a basic solution whenever the
    subgradient optimality certificate of that vertex holds, or the vertex
    simply has no larger objective.
    """
    if tau.tail is not Tail.LOWER:
        raise InputError("fit_quantile expects a lower-tail level; map upper tails first")
    X, y, t = data.X, data.y, tau.tau
    _check_rank(X)

    coef, it, gap, obj, converged = kernels.rq_fnb(X, y, t, tol=tol, max_iter=max_iter)
    coef = np.asarray(coef, dtype=float)
    if it == 0 and converged:
        # exact interpolation: every residual is zero
        return QuantileFit(coef, np.zeros(data.n), 0, True, 0.0, 0.0,
                           tuple(range(data.p)))

    obj_ipm = pinball_objective(y - X @ coef, t)
    polished = _polish(X, y, t, coef)
    if polished is not None:
        b, res, basis, certified = polished
        obj_v = pinball_objective(res, t)
        if certified or obj_v <= obj_ipm * (1.0 + 1e-12):
            return QuantileFit(b, res, it, converged or certified, obj_v, gap, basis)
    if not converged:
        raise ConvergenceError(
            f"quantile regression did not converge in {max_iter} iterations "
            f"(duality gap {gap:.3g})",
            best=coef,
            iterations=it,
        )
    return QuantileFit(coef, y - X @ coef, it, True, obj_ipm, gap, ())


def quantile_residuals(data: Dataset, fit: QuantileFit) -> np.ndarray:
    if fit.theta_q.shape[0] != data.p or fit.residuals.shape[0] != data.n:
        raise InputError("quantile fit does not match the dataset dimensions")
    r = data.y - data.X @ fit.theta_q
    if fit.basis:
        r[list(fit.basis)] = 0.0
    return r

"""Second step: ES coefficients from the plug-in loss, plus the joint oracle."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import kernels
from .errors import ConvergenceError, DomainError, InputError, SmallTailError
from .model import (
    Dataset,
    SpecFamily,
    Tail,
    TauLevel,
    Theta,
    negate_for_upper_tail,
)
from .quantile import QuantileFit, fit_quantile, quantile_residuals

# Strict feasibility margin for the logneg family: every fitted ES < -_FEAS.
_FEAS = 1e-8


@dataclass(frozen=True)
class ESFit:
    theta_e: np.ndarray
    theta_e_internal: np.ndarray
    shift: float
    gradient_norm: float
    iterations: int
    family: SpecFamily
    objective: float
    objective_trace: tuple[float, ...] = field(default=(), repr=False)


@dataclass(frozen=True)
class JointFit:
    theta_q: np.ndarray
    theta_e: np.ndarray
    objective: float
    evaluations: int
    init_objective: float


def apply_shift(data: Dataset) -> tuple[Dataset, float]:
    """Move the response so that ``max(y) == -1``.

    Anchoring at the maximum makes the whole pipeline exactly location
    equivariant and keeps negative ES fits available for the logneg family.
    """
    shift = float(np.max(data.y)) + 1.0
    return data.with_response(data.y - shift), shift


def unshift(theta: Theta, shift: float) -> Theta:
    tq = np.array(theta.theta_q, dtype=float)
    te = np.array(theta.theta_e, dtype=float)
    tq[0] += shift
    te[0] += shift
    return Theta(tq, te, theta.shift - shift)


def _pseudo_from_fit(data: Dataset, qfit: QuantileFit, tau: float):
    u = quantile_residuals(data, qfit)
    fitted = data.y - u
    tail = u <= 0.0
    if int(np.count_nonzero(tail)) < 2:
        raise SmallTailError(
            f"only {int(np.count_nonzero(tail))} observation(s) at or below the "
            f"fitted quantile; need at least 2"
        )
    return fitted + np.where(tail, u / tau, 0.0)


def _plugin_objective(z, c, family: SpecFamily) -> float:
    return float(np.sum(family.g2(z) * (z - c) - family.g2_antideriv(z)))


def solve_es(X, c, family: SpecFamily, *, offset=None, init=None, tol: float = 1e-10,
             max_iter: int = 100, method: str = "auto"):
    """Minimize the summed plug-in loss written in terms of pseudo-responses.

    The linear predictor is ``X @ theta + offset``. Returns
    ``(theta, gradient_norm, iterations, objective, trace)`` where the gradient
    norm is that of the mean gradient.
    """
    X = np.asarray(X, dtype=float)
    c = np.asarray(c, dtype=float)
    n, p = X.shape
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    target = c - off

    closed = np.linalg.lstsq(X, target, rcond=None)[0]
    if family is SpecFamily.CONSTANT and method == "auto":
        z = X @ closed + off
        g = X.T @ (z - c) / n
        return closed, float(np.linalg.norm(g)), 0, _plugin_objective(z, c, family), ()

    if init is not None:
        theta = np.array(init, dtype=float)
    elif family is SpecFamily.CONSTANT:
        theta = np.zeros(p)
    else:
        theta = closed
    z = X @ theta + off
    if family is SpecFamily.LOGNEG and np.max(z) >= -_FEAS:
        # fall back to a flat start below every pseudo-response
        theta = np.zeros(p)
        floor = min(float(np.min(target)), -1.0)
        theta[0] = floor - abs(floor) - 1.0
        z = X @ theta + off
        if np.max(z) >= -_FEAS:
            row = int(np.argmax(z))
            raise DomainError("no strictly feasible start for the logneg ES fit", row=row)

    obj = _plugin_objective(z, c, family)
    trace = [obj]
    it = 0
    gnorm = np.inf
    while True:
        w1 = family.g2_deriv(z)
        resid = z - c
        grad = X.T @ (w1 * resid)
        gnorm = float(np.linalg.norm(grad)) / n
        if gnorm <= tol * (1.0 + float(np.linalg.norm(theta))) or it >= max_iter:
            break
        it += 1
        hw = family.g2_second(z) * resid + w1
        H = X.T @ (hw[:, None] * X)
        try:
            np.linalg.cholesky(H)
        except np.linalg.LinAlgError:
            # expected Hessian, always positive definite
            H = X.T @ (w1[:, None] * X)
        step = np.linalg.solve(H, grad)
        slope = float(grad @ step)
        a = 1.0
        accepted = False
        while a > 1e-12:
            cand = theta - a * step
            zc = X @ cand + off
            if family is SpecFamily.CONSTANT or np.max(zc) < -_FEAS:
                oc = _plugin_objective(zc, c, family)
                if oc <= obj - 1e-4 * a * slope:
                    accepted = True
                    break
            a *= 0.5
        if not accepted:
            break
        theta, z, obj = cand, zc, oc
        trace.append(obj)

    if not gnorm <= 1e-6 * (1.0 + float(np.linalg.norm(theta))):
        raise ConvergenceError(
            f"ES step stopped with mean gradient norm {gnorm:.3g} after {it} iterations",
            best=theta,
            iterations=it,
        )
    return theta, gnorm, it, obj, tuple(trace)


def fit_es_two_step(data: Dataset, tau: TauLevel, spec: SpecFamily, qfit: QuantileFit,
                    *, shift: float = 0.0, method: str = "auto") -> ESFit:
    """ES coefficients minimizing the plug-in loss with ``qfit`` held fixed.

    ``data`` is the working (already shifted) dataset; ``shift`` is added back
    to the intercept of the reported coefficients.
    """
    if tau.tail is not Tail.LOWER:
        raise InputError("fit_es_two_step expects a lower-tail level")
    c = _pseudo_from_fit(data, qfit, tau.tau)
    theta, gnorm, it, obj, trace = solve_es(data.X, c, spec, method=method)
    user = theta.copy()
    user[0] += shift
    return ESFit(user, theta, shift, gnorm, it, spec, obj, trace)


@dataclass(frozen=True)
class TwoStepFit:
    """Full two-step fit.

    ``work``/``work_tau`` hold the lower-tail, shifted problem on which all
    estimation and inference run; ``sign`` is -1 for upper-tail requests.
    """

    data: Dataset
    tau: TauLevel
    family: SpecFamily
    work: Dataset
    work_tau: TauLevel
    sign: float
    shift: float
    qfit: QuantileFit
    es: ESFit
    pseudo: np.ndarray = field(repr=False)

    @property
    def theta_q(self) -> np.ndarray:
        tq = self.qfit.theta_q.copy()
        tq[0] += self.shift
        return self.sign * tq

    @property
    def theta_e(self) -> np.ndarray:
        return self.sign * self.es.theta_e

    @property
    def residuals(self) -> np.ndarray:
        return self.qfit.residuals


def working_problem(data: Dataset, tau: TauLevel):
    """Lower-tail, shifted version of ``(data, tau)``: ``(work, work_tau, sign, shift)``."""
    sign = 1.0
    if tau.tail is Tail.UPPER:
        data, tau = negate_for_upper_tail(data, tau)
        sign = -1.0
    work, shift = apply_shift(data)
    return work, tau, sign, shift


def fit_two_step(data: Dataset, tau: TauLevel, family: SpecFamily = SpecFamily.LOGNEG) -> TwoStepFit:
    work, wtau, sign, shift = working_problem(data, tau)
    qfit = fit_quantile(work, wtau)
    es = fit_es_two_step(work, wtau, family, qfit, shift=shift)
    c = _pseudo_from_fit(work, qfit, wtau.tau)
    return TwoStepFit(data, tau, family, work, wtau, sign, shift, qfit, es, c)


def fit_joint_one_step(data: Dataset, tau: TauLevel, spec: SpecFamily, init: Theta, *,
                       max_evals: int = 50000, fatol: float = 1e-8) -> JointFit:
    """Derivative-free local minimization of the summed joint loss from ``init``.

    Uses a Nelder-Mead simplex of 2p + 1 vertices in the stacked
    ``(theta_q, theta_e)`` coordinates.
    """
    if tau.tail is not Tail.LOWER:
        raise InputError("fit_joint_one_step expects a lower-tail level")
    y, X, t, code = data.y, data.X, tau.tau, spec.code
    p = data.p
    x0 = np.concatenate([np.asarray(init.theta_q, float), np.asarray(init.theta_e, float)])

    def objective(v):
        return kernels.joint_loss_sum(y, X, v[:p], v[p:], t, code)

    f0 = objective(x0)
    if not np.isfinite(f0):
        raise DomainError("joint oracle start point is infeasible")
    simplex = [x0]
    for k in range(2 * p):
        v = x0.copy()
        v[k] += 0.05 * abs(v[k]) if v[k] != 0.0 else 0.00025
        simplex.append(v)
    res = minimize(
        objective,
        x0,
        method="Nelder-Mead",
        options={
            "initial_simplex": np.array(simplex),
            "maxfev": max_evals,
            "maxiter": max_evals,
            "fatol": fatol,
            "xatol": np.inf,
        },
    )
    best = res.x if res.fun <= f0 else x0
    fbest = min(float(res.fun), f0)
    if res.nfev >= max_evals and not res.success:
        raise ConvergenceError(
            f"joint simplex search used {res.nfev} evaluations without converging",
            best=best,
            iterations=int(res.nit),
        )
    return JointFit(best[:p].copy(), best[p:].copy(), fbest, int(res.nfev), f0)


def joint_from_two_step(fit: TwoStepFit, **kwargs) -> JointFit:
    """Run the joint oracle from a two-step solution; coefficients on the user scale."""
    init = Theta(fit.qfit.theta_q, fit.es.theta_e_internal)
    jf = fit_joint_one_step(fit.work, fit.work_tau, fit.family, init, **kwargs)
    back = unshift(Theta(jf.theta_q, jf.theta_e), fit.shift)
    return JointFit(fit.sign * back.theta_q, fit.sign * back.theta_e, jf.objective,
                    jf.evaluations, jf.init_objective)

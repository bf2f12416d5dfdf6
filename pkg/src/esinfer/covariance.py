"""Sandwich and bootstrap covariance of the ES coefficients.

The asymptotic covariance is ``Lambda^{-1} Omega Lambda^{-1} / n`` with

    Lambda = mean(x x' G2'(x'e))
    Omega  = mean(x x' G2'(x'e)**2 * (psi / tau + (1 - tau) / tau * phi**2))

where ``phi = x'q - x'e`` and ``psi`` is the variance of the quantile residual
given that it is non-positive. Everything here runs on the working
(lower-tail, shifted) problem of a :class:`~esinfer.es.TwoStepFit`.
"""

from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import (
    EsInferError,
    InputError,
    InvalidPsiError,
    ScaleError,
    SingularDesignError,
    SmallTailError,
    StabilityError,
    TruncationMassError,
)
from .es import ESFit, TwoStepFit, fit_two_step
from .model import Dataset, SpecFamily, TauLevel
from .quantile import QuantileFit

log = logging.getLogger(__name__)


class PsiKind(enum.Enum):
    IID = "iid"
    NID = "nid"


class CovMethod(enum.Enum):
    WALD_IID = "w-iid"
    WALD_NID = "w-nid"
    BOOTSTRAP = "boot"


@dataclass(frozen=True)
class PsiEstimate:
    kind: PsiKind
    per_obs: np.ndarray
    nuisance: dict = field(default_factory=dict, repr=False)


@dataclass(frozen=True)
class NIDConfig:
    """Tuning of the location-scale truncated-variance estimator.

    ``bandwidth=None`` selects Silverman's rule. The quadrature runs on
    ``npts`` trapezoid nodes over standardized values from
    ``min(-width, min(e) - 6 h)`` up to the truncation point. ``scale_floor``
    bounds every fitted scale below by that fraction of the mean fitted scale.
    """

    bandwidth: float | None = None
    scale_floor: float = 0.1
    npts: int = 512
    width: float = 8.0
    max_iter: int = 200


@dataclass(frozen=True)
class CovarianceEstimate:
    lambda_hat: np.ndarray | None
    omega_hat: np.ndarray | None
    cov: np.ndarray
    method: CovMethod
    n: int
    diagnostics: dict = field(default_factory=dict, repr=False)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))


def _sym(a):
    return 0.5 * (a + a.T)


def psi_iid(residuals) -> PsiEstimate:
    """Sample variance (ddof=1) of the non-positive residuals, for every row."""
    u = np.asarray(residuals, dtype=float)
    neg = u[u <= 0.0]
    if neg.size < 2:
        raise SmallTailError(f"need at least 2 non-positive residuals, got {neg.size}")
    v = float(np.var(neg, ddof=1))
    return PsiEstimate(PsiKind.IID, np.full(u.shape[0], v), {"n_tail": int(neg.size)})


def silverman_bandwidth(x) -> float:
    x = np.asarray(x, dtype=float)
    sd = float(np.std(x, ddof=1))
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    return 0.9 * spread * x.shape[0] ** (-0.2)


def location_scale_qml(X, u, floor: float = 0.1, max_iter: int = 200, tol: float = 1e-8):
    """Gaussian quasi-ML of ``u = X alpha + (X nu) eps`` by Fisher scoring.

    The search is restricted to scales with ``min(X nu) >= floor * mean(X nu)``.
    Without that cone the likelihood is unbounded: a linear scale can be driven
    to zero at any row whose residual is zero, which every interpolated row of
    a quantile fit is. Returns ``(alpha, nu, iterations)``.
    """
    X = np.asarray(X, dtype=float)
    u = np.asarray(u, dtype=float)
    n, p = X.shape

    def feasible(b):
        s = X @ b
        m = float(np.mean(s))
        return m > 0.0 and float(np.min(s)) >= floor * m and float(np.min(s)) > 0.0

    alpha = np.linalg.lstsq(X, u, rcond=None)[0]
    absr = np.abs(u - X @ alpha)
    nu = np.linalg.lstsq(X, absr, rcond=None)[0] * math.sqrt(math.pi / 2.0)
    if not feasible(nu):
        nu = np.zeros(p)
        nu[0] = max(float(np.mean(absr)) * math.sqrt(math.pi / 2.0), 1e-12)

    def loglik(a, b):
        sig = X @ b
        r = u - X @ a
        return float(-np.sum(np.log(sig)) - 0.5 * np.sum((r / sig) ** 2))

    ll = loglik(alpha, nu)
    it = 0
    while it < max_iter:
        it += 1
        sig = X @ nu
        r = u - X @ alpha
        inv2 = 1.0 / sig**2
        score_a = X.T @ (r * inv2)
        score_n = X.T @ ((r * r * inv2 - 1.0) / sig)
        info_a = X.T @ (inv2[:, None] * X)
        try:
            da = np.linalg.solve(info_a, score_a)
            dn = np.linalg.solve(2.0 * info_a, score_n)
        except np.linalg.LinAlgError:
            break
        step = 1.0
        improved = False
        while step > 1e-10:
            a_new = alpha + step * da
            n_new = nu + step * dn
            if feasible(n_new):
                ll_new = loglik(a_new, n_new)
                if ll_new >= ll:
                    improved = True
                    break
            step *= 0.5
        if not improved:
            break
        change = step * max(float(np.max(np.abs(da))), float(np.max(np.abs(dn))))
        alpha, nu, ll = a_new, n_new, ll_new
        if change <= tol * (1.0 + max(float(np.max(np.abs(alpha))), float(np.max(np.abs(nu))))):
            break
    return alpha, nu, it


def psi_nid(data: Dataset, residuals, tau: TauLevel, config: NIDConfig | None = None) -> PsiEstimate:
    """Truncated residual variance under a location-scale residual model.

    Location and scale are fitted by Gaussian quasi-ML, the standardized
    innovation density by a Gaussian-kernel density estimate, and the
    truncated moments below zero by trapezoid quadrature of that estimate.
    """
    cfg = config or NIDConfig()
    X = data.X
    u = np.asarray(residuals, dtype=float)
    alpha, nu, iters = location_scale_qml(X, u, cfg.scale_floor, cfg.max_iter)
    loc = X @ alpha
    scale = X @ nu
    if np.min(scale) <= 0.0:
        row = int(np.argmin(scale))
        raise ScaleError(f"non-positive fitted residual scale {scale[row]:.3g} at row {row}", row=row)
    eps = (u - loc) / scale
    h = cfg.bandwidth if cfg.bandwidth is not None else silverman_bandwidth(eps)
    if not h > 0.0:
        raise ScaleError("kernel bandwidth is not positive (degenerate standardized residuals)")
    t = -loc / scale
    lower = min(-cfg.width, float(np.min(eps)) - 6.0 * h)
    F, m1, m2 = kernels.kde_truncated_moments(eps, h, t, lower, cfg.npts)
    if np.min(F) < 1e-10:
        row = int(np.argmin(F))
        raise TruncationMassError(
            f"estimated truncation probability {F[row]:.3g} at row {row} is below 1e-10"
        )
    mean = m1 / F
    var_std = m2 / F - mean * mean
    per_obs = scale**2 * var_std
    clamped = int(np.count_nonzero(per_obs < 0.0))
    if clamped:
        log.warning("clamped %d negative truncated variances to zero", clamped)
        per_obs = np.maximum(per_obs, 0.0)
    nuisance = {
        "alpha": alpha,
        "nu": nu,
        "bandwidth": h,
        "standardized": eps,
        "qml_iterations": iters,
        "clamped": clamped,
    }
    return PsiEstimate(PsiKind.NID, per_obs, nuisance)


def estimate_psi(fit: TwoStepFit, kind="iid", config: NIDConfig | None = None) -> PsiEstimate:
    if isinstance(kind, PsiEstimate):
        return kind
    kind = PsiKind(kind)
    if kind is PsiKind.IID:
        return psi_iid(fit.residuals)
    return psi_nid(fit.work, fit.residuals, fit.work_tau, config)


def lambda_hat(data: Dataset, es: ESFit, spec: SpecFamily) -> np.ndarray:
    X = data.X
    g = spec.g2_deriv(X @ es.theta_e_internal)
    lam = _sym(X.T @ (g[:, None] * X) / data.n)
    if np.linalg.matrix_rank(lam) < data.p:
        raise SingularDesignError("estimated Lambda is singular")
    return lam


def omega_hat(data: Dataset, qfit: QuantileFit, es: ESFit, psi: PsiEstimate,
              tau: TauLevel, spec: SpecFamily) -> np.ndarray:
    if np.any(psi.per_obs < 0.0):
        raise InvalidPsiError("truncated variance estimates must be non-negative")
    X = data.X
    t = tau.tau
    ze = X @ es.theta_e_internal
    phi = X @ qfit.theta_q - ze
    g = spec.g2_deriv(ze)
    wts = g * g * (psi.per_obs / t + (1.0 - t) / t * phi * phi)
    return _sym(X.T @ (wts[:, None] * X) / data.n)


def sandwich_cov(lam, omega, n: int) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    try:
        inv = np.linalg.inv(lam)
    except np.linalg.LinAlgError:
        raise SingularDesignError("Lambda is singular") from None
    return _sym(inv @ np.asarray(omega, dtype=float) @ inv / n)


def wald_covariance(fit: TwoStepFit, psi="iid", config: NIDConfig | None = None) -> CovarianceEstimate:
    """Plug-in sandwich covariance of the ES coefficients of ``fit``."""
    est = estimate_psi(fit, psi, config)
    lam = lambda_hat(fit.work, fit.es, fit.family)
    om = omega_hat(fit.work, fit.qfit, fit.es, est, fit.work_tau, fit.family)
    cov = sandwich_cov(lam, om, fit.work.n)
    method = CovMethod.WALD_IID if est.kind is PsiKind.IID else CovMethod.WALD_NID
    return CovarianceEstimate(lam, om, cov, method, fit.work.n, {"psi": est})


def _seed_parts(seed) -> list[int]:
    if isinstance(seed, (int, np.integer)):
        return [int(seed)]
    return [int(s) for s in seed]


def _boot_one(args):
    data, tau, spec, parts, b = args
    rng = np.random.default_rng(parts + [b])
    idx = rng.integers(0, data.n, data.n)
    try:
        return fit_two_step(data.subset(idx), tau, spec).theta_e
    except (EsInferError, np.linalg.LinAlgError):
        return None


def bootstrap_cov(data: Dataset, tau: TauLevel, spec: SpecFamily = SpecFamily.LOGNEG,
                  B: int = 1000, seed=0, workers: int = 1) -> CovarianceEstimate:
    """Pairs-bootstrap covariance of the two-step ES coefficients.

    Replicate ``b`` draws from ``default_rng([*seed, b])``, so the result is
    identical for any ``workers``. Failed replicates are dropped and counted;
    more than 10% failures raise :class:`StabilityError`.
    """
    if B < 50:
        raise InputError(f"need at least 50 bootstrap replicates, got {B}")
    parts = _seed_parts(seed)
    jobs = [(data, tau, spec, parts, b) for b in range(B)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            draws = list(pool.map(_boot_one, jobs, chunksize=max(1, B // (4 * workers))))
    else:
        draws = [_boot_one(j) for j in jobs]
    kept = [d for d in draws if d is not None]
    dropped = B - len(kept)
    if dropped > 0.1 * B:
        raise StabilityError(f"{dropped} of {B} bootstrap replicates failed to fit")
    est = np.array(kept)
    cov = _sym(np.atleast_2d(np.cov(est, rowvar=False, ddof=1)))
    return CovarianceEstimate(None, None, cov, CovMethod.BOOTSTRAP, data.n,
                              {"B": B, "dropped": dropped, "seed": parts})

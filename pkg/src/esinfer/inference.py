"""Wald and score inference on ES coefficients.

Score statistics are built on the working (lower-tail, shifted) problem of a
:class:`~esinfer.es.TwoStepFit`. Hypotheses and intervals are stated on the
user scale: a null value ``t`` for column ``j`` maps to ``sign * t`` there
(minus the response shift for the intercept).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .covariance import CovarianceEstimate, NIDConfig, PsiEstimate, PsiKind, estimate_psi
from .errors import ConditioningError, InputError, InversionError, SingularDesignError
from .es import TwoStepFit, fit_two_step, solve_es
from .model import Dataset, SpecFamily, TauLevel
from .special import chi_square_sf, normal_quantile

# Smallest eigenvalue of the score covariance allowed, relative to the largest.
_COND_TOL = 1e-12
_CI_TOL = 1e-4
_CI_MAX_BISECT = 60
_CI_MAX_WIDTHS = 10


@dataclass(frozen=True)
class Partition:
    """Split of the design columns into kept (``w_cols``) and tested (``z_cols``)."""

    w_cols: tuple[int, ...]
    z_cols: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "w_cols", tuple(int(i) for i in self.w_cols))
        object.__setattr__(self, "z_cols", tuple(int(i) for i in self.z_cols))
        if not self.z_cols:
            raise InputError("at least one tested column is required")
        if set(self.w_cols) & set(self.z_cols):
            raise InputError("kept and tested columns overlap")
        if 0 not in self.w_cols:
            raise InputError("the intercept must stay in the null model")

    @classmethod
    def testing(cls, p: int, cols) -> "Partition":
        z = sorted({int(c) for c in np.atleast_1d(cols)})
        if any(c < 0 or c >= p for c in z):
            raise InputError(f"tested column index out of range for p={p}")
        return cls(tuple(i for i in range(p) if i not in z), tuple(z))

    def check(self, p: int):
        if sorted(self.w_cols + self.z_cols) != list(range(p)):
            raise InputError(f"partition does not cover the {p} design columns exactly")


@dataclass(frozen=True)
class ScoreTestResult:
    t_n: float
    df: int
    p_value: float
    s_n: np.ndarray
    sigma_hat: np.ndarray
    psi_kind: PsiKind
    degenerate: bool = False


@dataclass(frozen=True)
class WaldTestResult:
    statistic: float
    df: int
    p_value: float
    z: float | None = None


@dataclass(frozen=True)
class Interval:
    lower: float
    upper: float
    level: float
    method: str
    diagnostics: dict = field(default_factory=dict, repr=False, compare=False)

    def contains(self, x: float) -> bool:
        return self.lower <= x <= self.upper

    @property
    def length(self) -> float:
        return self.upper - self.lower


def orthogonalize(Pi_W, Pi_Z, G) -> np.ndarray:
    """Remove from ``Pi_Z`` its ``G``-weighted projection on the span of ``Pi_W``.

    The result satisfies ``Pi_W' diag(G) result = 0``.
    """
    W = np.asarray(Pi_W, dtype=float)
    Z = np.asarray(Pi_Z, dtype=float)
    g = np.asarray(G, dtype=float)
    if np.any(g <= 0.0):
        raise InputError("projection weights must be positive")
    WG = W.T * g
    A = WG @ W
    if np.linalg.matrix_rank(A) < A.shape[0]:
        raise SingularDesignError("weighted Gram matrix of the kept columns is singular")
    coef = np.linalg.solve(A, WG @ Z)
    return Z - W @ coef


def _critical(level: float) -> float:
    if not 0.0 < level < 1.0:
        raise InputError(f"level must lie in (0, 1), got {level}")
    return normal_quantile(0.5 * (1.0 + level))


class _ScoreEngine:
    """Quantities of the score statistic that do not depend on the null value."""

    def __init__(self, fit: TwoStepFit, part: Partition, psi: PsiEstimate):
        data = fit.work
        part.check(data.p)
        X = data.X
        t = fit.work_tau.tau
        fam = fit.family
        self.fit = fit
        self.part = part
        self.psi = psi
        self.n = data.n
        self.W = X[:, part.w_cols]
        self.Z = X[:, part.z_cols]
        self.c = fit.pseudo
        theta_full = fit.es.theta_e_internal
        ze = X @ theta_full
        self.G = fam.g2_deriv(ze)
        self.Zs = orthogonalize(self.W, self.Z, self.G)
        phi = X @ fit.qfit.theta_q - ze
        if np.any(psi.per_obs < 0.0):
            raise InputError("truncated variance estimates must be non-negative")
        wts = self.G**2 * (psi.per_obs / t + (1.0 - t) / t * phi * phi)
        sig = (self.Zs.T * wts) @ self.Zs / self.n
        self.sigma = 0.5 * (sig + sig.T)
        ev = np.linalg.eigvalsh(self.sigma)
        if not ev[0] > _COND_TOL * max(ev[-1], 0.0):
            raise ConditioningError(
                f"score covariance is ill-conditioned (eigenvalues {ev[0]:.3g} .. {ev[-1]:.3g})"
            )
        inv = np.linalg.inv(self.sigma)
        self.sigma_inv = 0.5 * (inv + inv.T)

    def working_null(self, null_user) -> np.ndarray:
        v = np.broadcast_to(np.asarray(null_user, dtype=float), (len(self.part.z_cols),))
        return self.fit.sign * v

    def evaluate(self, null_user=0.0, init=None):
        off = self.Z @ self.working_null(null_user)
        theta1 = solve_es(self.W, self.c, self.fit.family, offset=off, init=init)[0]
        bracket = self.W @ theta1 + off - self.c
        s_n = self.Zs.T @ (self.G * bracket) / np.sqrt(self.n)
        t_n = float(max(s_n @ self.sigma_inv @ s_n, 0.0))
        return t_n, s_n, theta1

    def result(self, null_user=0.0) -> ScoreTestResult:
        t_n, s_n, _ = self.evaluate(null_user)
        df = len(self.part.z_cols)
        return ScoreTestResult(t_n, df, chi_square_sf(t_n, df), s_n, self.sigma, self.psi.kind)


def score_test_from_fit(fit: TwoStepFit, part: Partition, psi="iid", null=0.0,
                        nid_config: NIDConfig | None = None) -> ScoreTestResult:
    """Score test of ``theta_e[z_cols] == null`` given a full two-step fit."""
    est = estimate_psi(fit, psi, nid_config)
    return _ScoreEngine(fit, part, est).result(null)


def score_test(data: Dataset, part: Partition, tau: TauLevel,
               spec: SpecFamily = SpecFamily.LOGNEG, psi="iid", null=0.0,
               nid_config: NIDConfig | None = None) -> ScoreTestResult:
    """Fit the full model and score-test ``theta_e[z_cols] == null``.

    Tested columns that are identically zero carry no information and would
    make the full design singular. They are dropped before fitting and get a
    zero score and zero variance in the result, which is flagged degenerate.
    """
    part.check(data.p)
    live = [k for k, c in enumerate(part.z_cols) if np.any(data.X[:, c] != 0.0)]
    if len(live) == len(part.z_cols):
        return score_test_from_fit(fit_two_step(data, tau, spec), part, psi, null, nid_config)
    p2 = len(part.z_cols)
    kind = psi.kind if isinstance(psi, PsiEstimate) else PsiKind(psi)
    s_n = np.zeros(p2)
    sigma = np.zeros((p2, p2))
    t_n = 0.0
    if live:
        keep = sorted(part.w_cols + tuple(part.z_cols[k] for k in live))
        names = tuple(data.column_names[c] for c in keep) if data.column_names else ()
        sub = Dataset(data.y, data.X[:, keep], names)
        sub_part = Partition.testing(len(keep), [keep.index(part.z_cols[k]) for k in live])
        nulls = np.broadcast_to(np.asarray(null, dtype=float), (p2,))[live]
        res = score_test_from_fit(fit_two_step(sub, tau, spec), sub_part, psi, nulls, nid_config)
        s_n[live] = res.s_n
        sigma[np.ix_(live, live)] = res.sigma_hat
        t_n = res.t_n
    return ScoreTestResult(t_n, p2, chi_square_sf(t_n, p2), s_n, sigma, kind, degenerate=True)


score_statistic = score_test


def wald_test(cov: CovarianceEstimate, theta_e, cols, null=0.0) -> WaldTestResult:
    """Wald chi-square test of ``theta_e[cols] == null`` (user scale)."""
    cols = [int(c) for c in np.atleast_1d(cols)]
    theta = np.asarray(theta_e, dtype=float)
    d = theta[cols] - np.broadcast_to(np.asarray(null, dtype=float), (len(cols),))
    V = np.asarray(cov.cov)[np.ix_(cols, cols)]
    if np.all(d == 0.0):
        stat = 0.0
    else:
        if np.linalg.matrix_rank(V) < len(cols):
            raise SingularDesignError("covariance block of the tested coefficients is singular")
        stat = float(max(d @ np.linalg.solve(V, d), 0.0))
    z = None
    if len(cols) == 1:
        se = float(np.sqrt(V[0, 0]))
        z = float(d[0] / se) if se > 0.0 else (0.0 if d[0] == 0.0 else float(np.sign(d[0]) * np.inf))
    return WaldTestResult(stat, len(cols), chi_square_sf(stat, len(cols)), z)


def wald_ci(cov: CovarianceEstimate, theta_e, col: int, level: float = 0.95) -> Interval:
    z = _critical(level)
    est = float(np.asarray(theta_e, dtype=float)[col])
    se = float(np.sqrt(max(np.asarray(cov.cov)[col, col], 0.0)))
    return Interval(est - z * se, est + z * se, level, "wald", {"se": se})


def score_ci(fit: TwoStepFit, col: int, psi="iid", level: float = 0.95,
             wald: Interval | None = None, nid_config: NIDConfig | None = None) -> Interval:
    """Invert the score test for a single coefficient by offset refits and bisection.

    Starting from the point estimate (always accepted), each side is scanned
    outward in steps of the Wald interval length until a rejected value is
    found, then bisected to a tolerance of 1e-4.
    """
    p = fit.work.p
    if not 0 < col < p:
        raise InputError("score intervals are available for non-intercept columns only")
    crit = _critical(level) ** 2
    est = estimate_psi(fit, psi, nid_config)
    engine = _ScoreEngine(fit, Partition.testing(p, [col]), est)
    center = float(fit.theta_e[col])
    if wald is None:
        from .covariance import wald_covariance

        wald = wald_ci(wald_covariance(fit, est), fit.theta_e, col, level)
    width = max(wald.length, 1e-8 * (1.0 + abs(center)))
    evals = 0

    def accepted(t):
        nonlocal evals
        evals += 1
        return engine.evaluate(t)[0] <= crit

    ends = []
    for direction, start in ((-1.0, wald.lower), (1.0, wald.upper)):
        inside = center
        outside = None
        probe = start if direction * (start - center) > 0 else center + direction * width
        for _ in range(_CI_MAX_WIDTHS + 1):
            if accepted(probe):
                inside = probe
                probe = probe + direction * width
            else:
                outside = probe
                break
        if outside is None:
            raise InversionError(
                f"score test still accepts at {inside:.6g}; no rejection within "
                f"{_CI_MAX_WIDTHS} Wald lengths",
                scanned=tuple(sorted((center, inside))),
            )
        for _ in range(_CI_MAX_BISECT):
            if abs(outside - inside) <= _CI_TOL:
                break
            mid = 0.5 * (inside + outside)
            if accepted(mid):
                inside = mid
            else:
                outside = mid
        ends.append(inside)
    return Interval(ends[0], ends[1], level, "score", {"evaluations": evals})

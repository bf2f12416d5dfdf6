"""Monte Carlo scenarios for treatment effects on the upper-tail ES.

Every scenario is a balanced two-arm trial (control rows first). Replicate
``r`` of a configuration with seed ``s`` draws its data from
``default_rng([s, r])`` and its bootstrap resamples from
``default_rng([s, r, 1, b])``, so reports do not depend on how replicates are
scheduled across workers.
"""

from __future__ import annotations

import enum
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtr, ndtri, stdtrit

from .covariance import NIDConfig, bootstrap_cov, estimate_psi, wald_covariance
from .errors import CapExceededError, EsInferError, InputError
from .es import fit_two_step
from .inference import Interval, Partition, _ScoreEngine, score_ci, wald_ci, wald_test
from .model import Dataset, SpecFamily, Tail, TauLevel
from .special import chi_square_sf, normal_pdf, normal_quantile

TREATMENT_COL = 1
BOOT_DEFAULT_B = 1000
# More failed replicates than this fraction invalidates a report.
MAX_FAILURE_RATE = 0.05


class Scenario(enum.Enum):
    S1 = 1
    S2 = 2
    S3 = 3
    S4 = 4

    @classmethod
    def parse(cls, value) -> "Scenario":
        if isinstance(value, cls):
            return value
        s = str(value).strip().upper().lstrip("S")
        try:
            return cls(int(s))
        except ValueError:
            raise InputError(f"unknown scenario {value!r}; use 1-4") from None


class Method(enum.Enum):
    W_IID = "W-IID"
    W_NID = "W-NID"
    S_IID = "S-IID"
    S_NID = "S-NID"
    BOOT = "BOOT"

    @classmethod
    def parse(cls, value) -> "Method":
        if isinstance(value, cls):
            return value
        key = str(value).strip().upper()
        for m in cls:
            if m.value == key:
                return m
        raise InputError(f"unknown method {value!r}; use one of {', '.join(m.value for m in cls)}")


ALL_METHODS = tuple(Method)

# error-scale multiplier on the treated arm
_GAMMA = {Scenario.S1: 0.0, Scenario.S2: 0.25, Scenario.S3: 0.0, Scenario.S4: 0.2}


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: Scenario
    n_per_group: int
    eta: float
    tau: TauLevel = TauLevel(0.8, Tail.UPPER)
    replications: int = 600
    seed: int = 0
    methods: tuple[Method, ...] = ALL_METHODS
    B: int = 200
    level: float = 0.95
    family: SpecFamily = SpecFamily.LOGNEG

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario.parse(self.scenario))
        ms = tuple(sorted({Method.parse(m) for m in self.methods}, key=ALL_METHODS.index))
        object.__setattr__(self, "methods", ms)
        if not ms:
            raise InputError("at least one method is required")
        if self.replications < 1:
            raise InputError(f"replications must be at least 1, got {self.replications}")
        if self.n_per_group < 25:
            raise InputError(f"n_per_group must be at least 25, got {self.n_per_group}")
        if not math.isfinite(self.eta):
            raise InputError("eta must be finite")
        if not 0.0 < self.level < 1.0:
            raise InputError("level must lie in (0, 1)")
        if Method.BOOT in ms and self.B < 50:
            raise InputError(f"B must be at least 50, got {self.B}")


def normal_upper_es(tau: float) -> float:
    """``E[e | e >= q_tau]`` for a standard normal ``e``."""
    return normal_pdf(normal_quantile(tau)) / (1.0 - tau)


def t_upper_es(tau: float, df: float) -> float:
    """``E[e | e >= q_tau]`` for a Student t ``e`` with ``df > 1``."""
    q = float(stdtrit(df, tau))
    logc = math.lgamma(0.5 * (df + 1.0)) - math.lgamma(0.5 * df) - 0.5 * math.log(df * math.pi)
    dens = math.exp(logc - 0.5 * (df + 1.0) * math.log1p(q * q / df))
    return (df + q * q) / (df - 1.0) * dens / (1.0 - tau)


def error_upper_es(scenario, tau: float) -> float:
    sc = Scenario.parse(scenario)
    if sc is Scenario.S4:
        return 0.5 * t_upper_es(tau, 3.0)
    return normal_upper_es(tau)


def _upper_tau(tau) -> float:
    if isinstance(tau, TauLevel):
        if tau.tail is not Tail.UPPER:
            raise InputError("scenario effects are defined for the upper tail")
        return tau.tau
    return float(tau)


def true_treatment_effect(scenario, tau, eta: float) -> float:
    """Upper-tail ES coefficient of the treatment indicator."""
    sc = Scenario.parse(scenario)
    t = _upper_tau(tau)
    if sc is Scenario.S2:
        return -eta + _GAMMA[sc] * error_upper_es(sc, t)
    return eta + _GAMMA[sc] * error_upper_es(sc, t)


def null_eta(scenario, tau) -> float:
    """The ``eta`` at which the true treatment effect is zero."""
    sc = Scenario.parse(scenario)
    t = _upper_tau(tau)
    g = _GAMMA[sc] * error_upper_es(sc, t)
    return g if sc is Scenario.S2 else -g


def _left_truncated_normal(rng, mean: float, sd: float, lower: float, size: int):
    a = ndtr((lower - mean) / sd)
    u = rng.random(size)
    return mean + sd * ndtri(a + u * (1.0 - a))


def generate_scenario(cfg: ScenarioConfig, rep_index: int) -> Dataset:
    rng = np.random.default_rng([cfg.seed, rep_index])
    m = cfg.n_per_group
    n = 2 * m
    D = np.repeat([0.0, 1.0], m)
    ones = np.ones(n)
    eta = cfg.eta
    sc = cfg.scenario
    if sc is Scenario.S1:
        x1 = rng.normal(2.5, 0.5, n)
        eps = rng.standard_normal(n)
        y = 5.0 + eta * D + x1 + eps
        return Dataset(y, np.column_stack([ones, D, x1]), ("(Intercept)", "D", "x1"))
    if sc is Scenario.S2:
        C = np.concatenate([
            _left_truncated_normal(rng, 0.0, 0.5, -0.5, m),
            _left_truncated_normal(rng, 0.5, 0.5, -0.5, m),
        ])
        eps = rng.standard_normal(n)
        y = 5.0 - eta * D + C + (1.0 + 0.25 * D + 2.0 * C) * eps
        return Dataset(y, np.column_stack([ones, D, C]), ("(Intercept)", "D", "C"))
    x2 = (rng.random(n) < 0.4).astype(float)
    x3 = np.exp(rng.standard_normal(n))
    x4 = np.exp(rng.standard_normal(n))
    z = rng.standard_normal((n, 2))
    x5 = 2.0 + z[:, 0]
    x6 = 2.0 + 0.8 * z[:, 0] + 0.6 * z[:, 1]
    x7 = rng.standard_normal(n) ** 2
    if sc is Scenario.S3:
        eps = rng.standard_normal(n)
    else:
        eps = 0.5 * rng.standard_normal(n) / np.sqrt(rng.chisquare(3.0, n) / 3.0)
    y = 5.0 + eta * D + x2 + x3 + x4 + x5 + x6 + x7 + (1.0 + _GAMMA[sc] * D) * eps
    X = np.column_stack([ones, D, x2, x3, x4, x5, x6, x7])
    return Dataset(y, X, ("(Intercept)", "D", "x2", "x3", "x4", "x5", "x6", "x7"))


@dataclass(frozen=True)
class MethodOutcome:
    reject: bool
    covered: bool
    length: float


@dataclass(frozen=True)
class MethodSummary:
    rejection_rate: float
    coverage: float
    avg_ci_length: float
    mc_standard_error: float
    failures: int
    successes: int


@dataclass(frozen=True)
class SimulationReport:
    config: ScenarioConfig
    truth: float
    methods: dict
    valid: bool
    flags: tuple[str, ...] = ()
    wall_time: float = field(default=0.0, compare=False)

    def rows(self):
        for m in self.config.methods:
            s = self.methods[m]
            yield {
                "scenario": self.config.scenario.name,
                "n_per_group": self.config.n_per_group,
                "tau": self.config.tau.tau,
                "eta": self.config.eta,
                "truth": self.truth,
                "method": m.value,
                "rejection_rate": s.rejection_rate,
                "coverage": s.coverage,
                "avg_ci_length": s.avg_ci_length,
                "mc_standard_error": s.mc_standard_error,
                "failures": s.failures,
                "successes": s.successes,
            }


def _outcome(iv: Interval, p_value: float, truth: float, alpha: float) -> MethodOutcome:
    return MethodOutcome(bool(p_value < alpha), iv.contains(truth), iv.length)


def run_replicate(cfg: ScenarioConfig, rep_index: int, truth: float | None = None,
                  nid_config: NIDConfig | None = None) -> dict:
    """Apply every configured method to one generated dataset.

    Returns a mapping from method to :class:`MethodOutcome`, or to ``None``
    when that method failed on this replicate.
    """
    if truth is None:
        truth = true_treatment_effect(cfg.scenario, cfg.tau, cfg.eta)
    alpha = 1.0 - cfg.level
    col = TREATMENT_COL
    out = dict.fromkeys(cfg.methods)
    try:
        data = generate_scenario(cfg, rep_index)
        fit = fit_two_step(data, cfg.tau, cfg.family)
    except EsInferError:
        return out
    part = Partition.testing(data.p, [col])
    for kind, wm, sm in (("iid", Method.W_IID, Method.S_IID), ("nid", Method.W_NID, Method.S_NID)):
        if wm not in out and sm not in out:
            continue
        try:
            psi = estimate_psi(fit, kind, nid_config)
            cov = wald_covariance(fit, psi)
        except EsInferError:
            continue
        w_iv = wald_ci(cov, fit.theta_e, col, cfg.level)
        if wm in out:
            try:
                wt = wald_test(cov, fit.theta_e, [col])
                out[wm] = _outcome(w_iv, wt.p_value, truth, alpha)
            except EsInferError:
                pass
        if sm in out:
            try:
                st = _ScoreEngine(fit, part, psi).result(0.0)
                s_iv = score_ci(fit, col, psi, cfg.level, wald=w_iv)
                out[sm] = _outcome(s_iv, st.p_value, truth, alpha)
            except EsInferError:
                pass
    if Method.BOOT in out:
        try:
            bc = bootstrap_cov(data, cfg.tau, cfg.family, cfg.B, seed=[cfg.seed, rep_index, 1])
            iv = wald_ci(bc, fit.theta_e, col, cfg.level)
            se = iv.diagnostics["se"]
            est = float(fit.theta_e[col])
            if se > 0.0:
                p = chi_square_sf((est / se) ** 2, 1)
            else:
                p = 1.0 if est == 0.0 else 0.0
            out[Method.BOOT] = _outcome(iv, p, truth, alpha)
        except EsInferError:
            pass
    return out


def _rep_job(args):
    cfg, rep, truth, nid_config = args
    return run_replicate(cfg, rep, truth, nid_config)


def summarize(cfg: ScenarioConfig, truth: float, results: list[dict],
              wall_time: float = 0.0) -> SimulationReport:
    summaries = {}
    valid = True
    reps = len(results)
    for m in cfg.methods:
        ok = [r[m] for r in results if r.get(m) is not None]
        fails = reps - len(ok)
        if fails > MAX_FAILURE_RATE * reps:
            valid = False
        k = len(ok)
        if k:
            rate = sum(o.reject for o in ok) / k
            cover = sum(o.covered for o in ok) / k
            length = float(np.mean([o.length for o in ok]))
            se = math.sqrt(rate * (1.0 - rate) / k)
        else:
            rate = cover = length = se = math.nan
        summaries[m] = MethodSummary(rate, cover, length, se, fails, k)
    flags = []
    if Method.BOOT in cfg.methods and cfg.B < BOOT_DEFAULT_B:
        flags.append(f"BOOT uses B={cfg.B}, below the standalone default {BOOT_DEFAULT_B}")
    if not valid:
        flags.append(f"more than {MAX_FAILURE_RATE:.0%} of replicates failed for some method")
    return SimulationReport(cfg, truth, summaries, valid, tuple(flags), wall_time)


def run_monte_carlo(cfg: ScenarioConfig, workers: int = 1,
                    nid_config: NIDConfig | None = None) -> SimulationReport:
    """Run all replicates of ``cfg`` and aggregate per-method rates.

    Rates are over the replicates where the method succeeded; the Monte Carlo
    standard error is that of the rejection rate.
    """
    if cfg.replications < 1:
        raise InputError("replications must be at least 1")
    start = time.perf_counter()
    truth = true_treatment_effect(cfg.scenario, cfg.tau, cfg.eta)
    jobs = [(cfg, r, truth, nid_config) for r in range(cfg.replications)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunk = max(1, cfg.replications // (4 * workers))
            results = list(pool.map(_rep_job, jobs, chunksize=chunk))
    else:
        results = [_rep_job(j) for j in jobs]
    return summarize(cfg, truth, results, time.perf_counter() - start)


@dataclass(frozen=True)
class SampleSizeResult:
    n_per_group: int
    power: float
    mc_standard_error: float
    path: tuple[tuple[int, float, float], ...]


def sample_size_search(template: ScenarioConfig, effect: float, target_power: float,
                       method=Method.S_NID, *, cap: int = 3200, resolution: int = 1,
                       workers: int = 1) -> SampleSizeResult:
    """Smallest ``n_per_group`` whose Monte Carlo power reaches ``target_power``.

    ``n`` doubles from 25 until the target is met, then the last bracket is
    bisected down to ``resolution``. Every evaluation reuses the template seed,
    so neighbouring sample sizes share their random streams.
    """
    if not 0.0 < target_power < 1.0:
        raise InputError("target power must lie in (0, 1)")
    method = Method.parse(method)
    curve: dict[int, tuple[float, float]] = {}

    def power(n: int):
        if n not in curve:
            cfg = replace(template, n_per_group=n, eta=effect, methods=(method,))
            s = run_monte_carlo(cfg, workers).methods[method]
            curve[n] = (s.rejection_rate, s.mc_standard_error)
        return curve[n][0]

    def path():
        return tuple((n, p, e) for n, (p, e) in sorted(curve.items()))

    lo = None
    hi = 25
    while not power(hi) >= target_power:
        lo = hi
        if hi >= cap:
            raise CapExceededError(
                f"power {curve[hi][0]:.3f} at n_per_group={hi} is below {target_power}",
                curve=path(),
            )
        hi = min(2 * hi, cap)
    if lo is not None:
        while hi - lo > resolution:
            mid = (lo + hi) // 2
            if power(mid) >= target_power:
                hi = mid
            else:
                lo = mid
    p, e = curve[hi]
    return SampleSizeResult(hi, p, e, path())

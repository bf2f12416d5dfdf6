import itertools

import numpy as np
import pytest

from esinfer.errors import InputError, SingularDesignError
from esinfer.model import Dataset, Tail, TauLevel
from esinfer.quantile import fit_quantile, pinball_objective

from conftest import location_data


def brute_force_vertex(X, y, tau):
    """Best interpolating solution over every p-subset: optimal for linear quantile regression."""
    n, p = X.shape
    best = None
    for rows in itertools.combinations(range(n), p):
        Xh = X[list(rows)]
        if abs(np.linalg.det(Xh)) < 1e-12:
            continue
        b = np.linalg.solve(Xh, y[list(rows)])
        obj = pinball_objective(y - X @ b, tau)
        if best is None or obj < best[0]:
            best = (obj, b)
    return best


@pytest.mark.parametrize("seed", range(6))
def test_matches_exhaustive_vertex_search(seed):
    d = location_data(14, seed=seed)
    tau = 0.25
    fit = fit_quantile(d, TauLevel(tau))
    obj, _ = brute_force_vertex(d.X, d.y, tau)
    assert fit.objective == pytest.approx(obj, rel=1e-10, abs=1e-12)
    assert len(fit.basis) == d.p
    np.testing.assert_array_equal(fit.residuals[list(fit.basis)], 0.0)


def test_intercept_only_is_sample_quantile():
    y = np.array([3.0, 1.0, 4.0, 1.5, 5.0, 9.0, 2.0, 6.0, 5.5, 3.5])
    fit = fit_quantile(Dataset(y, np.ones((10, 1))), TauLevel(0.35))
    # ceil(10 * 0.35) = 4th order statistic
    assert fit.theta_q[0] == pytest.approx(np.sort(y)[3], abs=1e-12)


def test_perturbation_does_not_lower_objective():
    d = location_data(300, seed=3, scale=0.5)
    fit = fit_quantile(d, TauLevel(0.2))
    rng = np.random.default_rng(0)
    for _ in range(50):
        b = fit.theta_q + 1e-3 * rng.normal(size=d.p)
        assert pinball_objective(d.y - d.X @ b, 0.2) >= fit.objective - 1e-12


def test_counting_condition():
    d = location_data(500, seed=4)
    t = 0.2
    fit = fit_quantile(d, TauLevel(t))
    below = np.mean(fit.residuals < 0)
    at_or_below = np.mean(fit.residuals <= 0)
    assert below <= t + 1e-12 and at_or_below >= t - 1e-12
    assert at_or_below - below <= d.p / d.n + 1e-12


def test_equivariance():
    d = location_data(200, seed=5)
    t = TauLevel(0.3)
    base = fit_quantile(d, t).theta_q
    shifted = fit_quantile(d.with_response(d.y + d.X @ np.array([2.0, -1.0])), t).theta_q
    np.testing.assert_allclose(shifted, base + [2.0, -1.0], atol=1e-8)
    scaled = fit_quantile(d.with_response(3.0 * d.y), t).theta_q
    np.testing.assert_allclose(scaled, 3.0 * base, atol=1e-8)


def test_perfect_fit():
    x = np.linspace(0, 1, 20)
    d = Dataset(1.0 + 2.0 * x, np.column_stack([np.ones(20), x]))
    fit = fit_quantile(d, TauLevel(0.4))
    np.testing.assert_allclose(fit.theta_q, [1.0, 2.0], atol=1e-9)
    assert fit.objective == pytest.approx(0.0, abs=1e-9)


def test_rank_deficient_design():
    x = np.arange(10.0)
    d = Dataset(x.copy(), np.column_stack([np.ones(10), x, 2 * x]))
    with pytest.raises(SingularDesignError):
        fit_quantile(d, TauLevel(0.5))


def test_upper_tail_rejected():
    d = location_data(20)
    with pytest.raises(InputError):
        fit_quantile(d, TauLevel(0.5, Tail.UPPER))

import numpy as np
import pytest

from esinfer.errors import SmallTailError
from esinfer.es import (
    fit_es_two_step,
    fit_two_step,
    joint_from_two_step,
    solve_es,
    working_problem,
)
from esinfer.model import Dataset, SpecFamily, Tail, TauLevel, plugin_loss
from esinfer.quantile import fit_quantile

from conftest import location_data


@pytest.mark.parametrize("family", list(SpecFamily))
def test_intercept_only_truncated_mean(five, family):
    fit = fit_two_step(five, TauLevel(0.3), family)
    assert fit.theta_q[0] == pytest.approx(2.0, abs=1e-12)
    assert fit.theta_e[0] == pytest.approx(4.0 / 3.0, abs=1e-10)


def test_upper_tail_intercept_only(five):
    fit = fit_two_step(five, TauLevel(0.7, Tail.UPPER), SpecFamily.LOGNEG)
    # mirror image: upper 30% of {1..5} is all of 5 and half of 4
    assert fit.theta_e[0] == pytest.approx((5.0 + 0.5 * 4.0) / 1.5, abs=1e-10)


@pytest.mark.parametrize("family", list(SpecFamily))
def test_location_model_recovers_slope(family):
    d = location_data(20000, seed=1)
    fit = fit_two_step(d, TauLevel(0.1), family)
    es_n = -1.7549833193249787  # lower 10% ES of N(0, 1)
    assert fit.theta_e[1] == pytest.approx(1.0, abs=0.08)
    assert fit.theta_e[0] == pytest.approx(5.0 + es_n, abs=0.08)


@pytest.mark.parametrize("family", list(SpecFamily))
def test_location_equivariance(family):
    d = location_data(300, seed=2, scale=0.3)
    t = TauLevel(0.2)
    a = fit_two_step(d, t, family).theta_e
    b = fit_two_step(d.with_response(d.y + 10.0), t, family).theta_e
    np.testing.assert_allclose(b, a + [10.0, 0.0], atol=1e-8)


def test_constant_closed_form_matches_newton():
    d = location_data(400, seed=3)
    work, wt, _, shift = working_problem(d, TauLevel(0.25))
    q = fit_quantile(work, wt)
    direct = fit_es_two_step(work, wt, SpecFamily.CONSTANT, q)
    newton = fit_es_two_step(work, wt, SpecFamily.CONSTANT, q, method="newton")
    np.testing.assert_allclose(direct.theta_e, newton.theta_e, atol=1e-10)


def test_logneg_trace_is_monotone_and_gradient_small():
    d = location_data(500, seed=4, scale=0.5)
    fit = fit_two_step(d, TauLevel(0.2), SpecFamily.LOGNEG)
    trace = np.array(fit.es.objective_trace)
    assert np.all(np.diff(trace) <= 1e-12)
    assert fit.es.gradient_norm <= 1e-8


def test_minimizer_of_plugin_loss():
    d = location_data(200, seed=5)
    tau = TauLevel(0.2)
    fit = fit_two_step(d, tau, SpecFamily.LOGNEG)
    work = fit.work
    tq = fit.qfit.theta_q
    f = lambda te: plugin_loss(work.y, work.X, tq, te, tau, SpecFamily.LOGNEG).sum()
    best = fit.es.theta_e_internal
    rng = np.random.default_rng(0)
    for _ in range(30):
        assert f(best + 1e-3 * rng.normal(size=2)) >= f(best) - 1e-9


def test_offset_solve():
    rng = np.random.default_rng(6)
    X = np.column_stack([np.ones(50), rng.normal(size=50)])
    c = -5.0 + rng.normal(size=50)
    off = 0.3 * X[:, 1]
    th = solve_es(X[:, :1], c, SpecFamily.CONSTANT, offset=off)[0]
    assert th[0] == pytest.approx(np.mean(c - off), abs=1e-12)


def test_small_tail():
    d = Dataset(np.array([1.0, 2.0, 3.0, 4.0]), np.ones((4, 1)))
    with pytest.raises(SmallTailError):
        fit_two_step(d, TauLevel(0.1), SpecFamily.LOGNEG)


def test_joint_oracle_does_not_worsen():
    d = location_data(200, seed=7)
    fit = fit_two_step(d, TauLevel(0.2), SpecFamily.LOGNEG)
    jf = joint_from_two_step(fit, max_evals=4000)
    assert jf.objective <= jf.init_objective
    np.testing.assert_allclose(jf.theta_e, fit.theta_e, atol=0.5)

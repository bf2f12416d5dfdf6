import os
import subprocess
import sys

import numpy as np
import pytest
from scipy.optimize import linprog

from esinfer import _kernels_py, kernels

compiled = pytest.importorskip("esinfer._kernels")


def _problem(n, p, seed):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
    return X, X @ rng.normal(size=p) + rng.standard_normal(n)


def lp_quantile_objective(X, y, tau):
    # min tau*1'u + (1-tau)*1'v  s.t.  X b + u - v = y, u, v >= 0
    n, p = X.shape
    cost = np.concatenate([np.zeros(p), np.full(n, tau), np.full(n, 1.0 - tau)])
    A = np.hstack([X, np.eye(n), -np.eye(n)])
    bounds = [(None, None)] * p + [(0, None)] * (2 * n)
    res = linprog(cost, A_eq=A, b_eq=y, bounds=bounds, method="highs")
    assert res.status == 0
    return res.fun


def test_backend_is_reported():
    forced = bool(os.environ.get("ESINFER_PURE_PYTHON"))
    assert kernels.BACKEND == ("python" if forced else "cython")


def test_fallback_forced_by_environment():
    env = dict(os.environ, ESINFER_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import esinfer; print(esinfer.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@pytest.mark.parametrize("n,p,tau", [(30, 1, 0.5), (80, 3, 0.2), (200, 4, 0.9)])
def test_rq_matches_linear_program(n, p, tau):
    X, y = _problem(n, p, n + p)
    want = lp_quantile_objective(X, y, tau)
    for mod in (_kernels_py, compiled):
        coef, it, gap, obj, conv = mod.rq_fnb(X, y, tau)
        r = y - X @ coef
        got = np.sum(r * (tau - (r < 0)))
        assert conv
        assert got == pytest.approx(want, rel=1e-7, abs=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_rq_backends_agree(seed):
    X, y = _problem(150, 3, seed)
    a = _kernels_py.rq_fnb(X, y, 0.3)
    b = compiled.rq_fnb(X, y, 0.3)
    np.testing.assert_allclose(a[0], b[0], atol=1e-6)


@pytest.mark.parametrize("h", [0.05, 0.3, 1.0, 2.0])
def test_kde_backends_agree(h):
    rng = np.random.default_rng(7)
    e = rng.standard_normal(120)
    t = np.linspace(-2.5, 1.5, 40)
    lower = min(-8.0, e.min() - 6 * h)
    Fa, m1a, m2a = _kernels_py.kde_truncated_moments(e, h, t, lower, 512)
    Fb, m1b, m2b = compiled.kde_truncated_moments(e, h, t, lower, 512)
    np.testing.assert_allclose(Fb, Fa, rtol=1e-9, atol=1e-12)
    ok = Fa >= 1e-10
    # moments are compared after dividing by the truncation mass, as they are used
    np.testing.assert_allclose((m1b / Fb)[ok], (m1a / Fa)[ok], atol=1e-8)
    np.testing.assert_allclose((m2b / Fb)[ok], (m2a / Fa)[ok], atol=1e-8)


def test_kde_truncated_mass_matches_closed_form():
    from scipy.special import ndtr

    e = np.array([-1.0, 0.0, 2.0])
    h = 0.5
    t = np.array([-0.5, 0.7, 3.0])
    F, m1, m2 = compiled.kde_truncated_moments(e, h, t, -9.0, 512)
    want = ndtr((t[:, None] - e[None, :]) / h).mean(axis=1)
    np.testing.assert_allclose(F, want, atol=1e-12)
    # mean of the full mixture is the sample mean
    Ffull, m1full, m2full = compiled.kde_truncated_moments(e, h, np.array([12.0]), -9.0, 4096)
    assert m1full[0] / Ffull[0] == pytest.approx(e.mean(), abs=1e-5)
    assert m2full[0] / Ffull[0] == pytest.approx(np.mean(e**2) + h**2, abs=1e-4)


@pytest.mark.parametrize("code", [0, 1])
def test_joint_loss_sum_backends_agree(code):
    X, y = _problem(300, 3, 9)
    tq = np.array([0.0, 0.4, -0.1])
    te = np.array([-4.0, 0.4, -0.1])
    a = _kernels_py.joint_loss_sum(y - 10.0, X, tq, te, 0.2, code)
    b = compiled.joint_loss_sum(y - 10.0, X, tq, te, 0.2, code)
    assert b == pytest.approx(a, rel=1e-12)


def test_joint_loss_sum_infeasible_is_inf():
    X = np.ones((3, 1))
    y = np.zeros(3)
    assert _kernels_py.joint_loss_sum(y, X, np.zeros(1), np.array([1.0]), 0.5, 1) == np.inf
    assert compiled.joint_loss_sum(y, X, np.zeros(1), np.array([1.0]), 0.5, 1) == np.inf

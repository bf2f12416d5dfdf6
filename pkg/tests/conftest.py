import numpy as np
import pytest

from esinfer.model import Dataset


def location_data(n, seed=0, slope=1.0, intercept=5.0, scale=None):
    """``y = intercept + slope * x + e`` with ``x ~ U(0, 2)``; heteroskedastic when ``scale`` is set."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 2.0, n)
    e = rng.standard_normal(n)
    if scale is not None:
        e = e * (1.0 + scale * x)
    y = intercept + slope * x + e
    return Dataset(y, np.column_stack([np.ones(n), x]), ("(Intercept)", "x"))


def treatment_data(n, seed=0, eta=0.0):
    """Two-arm homogeneous design: intercept, treatment dummy, one normal covariate."""
    rng = np.random.default_rng(seed)
    d = np.repeat([0.0, 1.0], n // 2)
    x1 = rng.normal(2.5, 0.5, n)
    y = 5.0 + eta * d + x1 + rng.standard_normal(n)
    return Dataset(y, np.column_stack([np.ones(n), d, x1]), ("(Intercept)", "D", "x1"))


@pytest.fixture
def five():
    return Dataset(np.arange(1.0, 6.0), np.ones((5, 1)))


ACCEPTANCE_LINES = {}


def record(criterion, passed, detail):
    """Store one acceptance line; printed in the terminal summary."""
    ACCEPTANCE_LINES[criterion] = f"criterion {criterion:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[criterion])
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])

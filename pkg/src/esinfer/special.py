"""Scalar normal and chi-square helpers returning plain floats."""

from __future__ import annotations

import math

from scipy.special import chdtrc, ndtr, ndtri


def normal_cdf(x: float) -> float:
    return float(ndtr(x))


def normal_pdf(x: float) -> float:
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def normal_quantile(p: float) -> float:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability must lie in [0, 1], got {p}")
    return float(ndtri(p))


def chi_square_sf(x: float, df: int | float) -> float:
    """``P(X > x)`` for ``X ~ chi-square(df)``."""
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    return float(chdtrc(df, max(x, 0.0))) if not math.isnan(x) else math.nan


def chi_square_cdf(x: float, df: int | float) -> float:
    return 1.0 - chi_square_sf(x, df)

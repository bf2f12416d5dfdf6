"""Domain types and the pointwise quantile/ES losses.

All losses here are evaluated observation by observation. They accept either a
single observation (scalar ``y``, 1-d ``x``) or a batch (1-d ``y``, 2-d ``X``)
and return a scalar or a per-observation vector accordingly. Summing is left to
the caller.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InputError


class Tail(enum.Enum):
    LOWER = "lower"
    UPPER = "upper"


@dataclass(frozen=True)
class TauLevel:
    tau: float
    tail: Tail = Tail.LOWER

    def __post_init__(self):
        if not (0.0 < float(self.tau) < 1.0):
            raise InputError(f"tau must lie in (0, 1), got {self.tau!r}")
        object.__setattr__(self, "tau", float(self.tau))
        if not isinstance(self.tail, Tail):
            object.__setattr__(self, "tail", Tail(self.tail))


class SpecFamily(enum.Enum):
    """Specification-function pairs selecting a member of the joint loss class.

    ``CONSTANT``: G2(z) = z, antiderivative z**2/2, G2' = 1.
    ``LOGNEG``: antiderivative -log(-z), G2(z) = -1/z, G2'(z) = 1/z**2, z < 0.

    G1 is the identity for both.
    """

    CONSTANT = "const"
    LOGNEG = "logneg"

    @property
    def code(self) -> int:
        return 0 if self is SpecFamily.CONSTANT else 1

    def in_domain(self, z):
        z = np.asarray(z, dtype=float)
        if self is SpecFamily.CONSTANT:
            return np.ones(z.shape, dtype=bool)
        return z < 0.0

    def g1(self, z):
        return np.asarray(z, dtype=float)

    def g2(self, z):
        z = np.asarray(z, dtype=float)
        if self is SpecFamily.CONSTANT:
            return z
        return -1.0 / z

    def g2_antideriv(self, z):
        z = np.asarray(z, dtype=float)
        if self is SpecFamily.CONSTANT:
            return 0.5 * z * z
        return -np.log(-z)

    def g2_deriv(self, z):
        z = np.asarray(z, dtype=float)
        if self is SpecFamily.CONSTANT:
            return np.ones_like(z)
        return 1.0 / (z * z)

    def g2_second(self, z):
        z = np.asarray(z, dtype=float)
        if self is SpecFamily.CONSTANT:
            return np.zeros_like(z)
        return -2.0 / (z * z * z)


# Extensible alias matching the domain vocabulary.
SpecFunctions = SpecFamily


@dataclass(frozen=True)
class Dataset:
    """Response vector plus design matrix whose first column is the intercept."""

    y: np.ndarray
    X: np.ndarray
    column_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        y = np.ascontiguousarray(np.asarray(self.y, dtype=float))
        X = np.ascontiguousarray(np.asarray(self.X, dtype=float))
        if y.ndim != 1:
            raise InputError("y must be one-dimensional")
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise InputError(f"X must be (n, p) with n = {y.shape[0]}, got {X.shape}")
        n, p = X.shape
        if n < p + 1:
            raise InputError(f"need n >= p + 1 observations, got n={n}, p={p}")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise InputError("data contain non-finite entries")
        if p == 0 or not np.all(X[:, 0] == 1.0):
            raise InputError("first design column must be the intercept (all ones)")
        names = tuple(self.column_names) or ("(Intercept)",) + tuple(
            f"x{j}" for j in range(1, p)
        )
        if len(names) != p:
            raise InputError(f"{len(names)} column names for {p} columns")
        y.setflags(write=False)
        X.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "column_names", names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.y[rows], self.X[rows], self.column_names)

    def with_response(self, y) -> "Dataset":
        return Dataset(np.asarray(y, dtype=float), self.X, self.column_names)

    def column_index(self, name: str) -> int:
        try:
            return self.column_names.index(name)
        except ValueError:
            raise InputError(f"unknown column {name!r}") from None


@dataclass(frozen=True)
class Theta:
    theta_q: np.ndarray
    theta_e: np.ndarray
    shift: float = 0.0


def _batch(y, x, *coefs):
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    scalar = y.ndim == 0
    Y = np.atleast_1d(y)
    X = x.reshape(1, -1) if x.ndim == 1 else x
    fitted = [X @ np.asarray(c, dtype=float) for c in coefs]
    return scalar, Y, X, fitted


def _check_domain(family: SpecFamily, ze):
    bad = ~family.in_domain(ze)
    if np.any(bad):
        row = int(np.flatnonzero(bad)[0])
        raise DomainError(
            f"ES linear predictor {ze[row]:.6g} outside the {family.value} domain "
            f"(z < 0) at row {row}",
            row=row,
        )


def _out(scalar, v):
    return float(v[0]) if scalar else v


def pseudo_response(y, x, theta_q_hat, tau: TauLevel):
    """Response whose least-squares fit solves the plug-in estimating equation.

    ``c = x'q - (x'q - y) I(y <= x'q) / tau``.
    """
    scalar, Y, _, (zq,) = _batch(y, x, theta_q_hat)
    ind = (Y <= zq).astype(float)
    return _out(scalar, zq - (zq - Y) * ind / tau.tau)


def joint_loss(y, x, theta: Theta, tau: TauLevel, spec: SpecFamily):
    """Strictly consistent joint quantile/ES loss with G1 = identity and a = 0."""
    scalar, Y, _, (zq, ze) = _batch(y, x, theta.theta_q, theta.theta_e)
    _check_domain(spec, ze)
    t = tau.tau
    ind = (Y <= zq).astype(float)
    quant_part = (ind - t) * zq - ind * Y
    es_part = spec.g2(ze) * (ze - zq + (zq - Y) * ind / t) - spec.g2_antideriv(ze)
    return _out(scalar, quant_part + es_part)


def plugin_loss(y, x, theta_q_hat, theta_e, tau: TauLevel, spec: SpecFamily):
    """ES part of the joint loss with the quantile coefficients held fixed."""
    scalar, Y, _, (zq, ze) = _batch(y, x, theta_q_hat, theta_e)
    _check_domain(spec, ze)
    ind = (Y <= zq).astype(float)
    val = spec.g2(ze) * (ze - zq + (zq - Y) * ind / tau.tau) - spec.g2_antideriv(ze)
    return _out(scalar, val)


def plugin_gradient(y, x, theta_q_hat, theta_e, tau: TauLevel, spec: SpecFamily):
    """Gradient of :func:`plugin_loss` in ``theta_e``.

    Equals ``x * G2'(x'e) * (x'e - c)`` with ``c`` the pseudo-response. Returns a
    length-p vector for a single observation and an (n, p) array for a batch.
    """
    scalar, Y, X, (zq, ze) = _batch(y, x, theta_q_hat, theta_e)
    _check_domain(spec, ze)
    ind = (Y <= zq).astype(float)
    c = zq - (zq - Y) * ind / tau.tau
    g = X * (spec.g2_deriv(ze) * (ze - c))[:, None]
    return g[0] if scalar else g


def negate_for_upper_tail(data: Dataset, tau: TauLevel) -> tuple[Dataset, TauLevel]:
    """Map an upper-tail problem at ``tau`` onto the lower tail of ``-y`` at ``1 - tau``.

    The map is an involution. Estimates obtained on the mapped problem are
    negated to recover the upper-tail coefficients; covariances carry over
    unchanged.
    """
    other = Tail.LOWER if tau.tail is Tail.UPPER else Tail.UPPER
    return data.with_response(-data.y), TauLevel(1.0 - tau.tau, other)

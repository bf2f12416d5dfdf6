"""Exception hierarchy.

The CLI maps these onto exit codes, so every failure raised by the library
belongs to exactly one of the families below.
"""

from __future__ import annotations


class EsInferError(Exception):
    """Base class for all library errors."""


class InputError(EsInferError, ValueError):
    """Malformed user input (bad shapes, non-finite values, unknown columns)."""


class FitError(EsInferError):
    """An estimation step could not produce a usable fit."""


class DomainError(FitError):
    """A linear predictor left the domain of the specification functions."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class SingularDesignError(FitError):
    """Design (or a derived weight matrix) is rank deficient."""


class SmallTailError(FitError):
    """Too few observations in the tail to estimate the ES step."""


class ConvergenceError(FitError):
    """Iterative solver stopped without meeting its tolerance."""

    def __init__(self, message: str, best=None, iterations: int | None = None):
        super().__init__(message)
        self.best = best
        self.iterations = iterations


class ScaleError(FitError):
    """Fitted scale of the location-scale residual model is not positive."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class TruncationMassError(FitError):
    """Estimated probability of the truncation region is numerically zero."""


class InvalidPsiError(FitError):
    """Truncated-variance estimates contain negative entries."""


class StabilityError(FitError):
    """Too many bootstrap replicates failed."""


class ConditioningError(EsInferError):
    """Score covariance is singular or too ill-conditioned to invert."""


class InversionError(EsInferError):
    """Score-test inversion could not bracket a confidence limit."""

    def __init__(self, message: str, scanned: tuple[float, float] | None = None):
        super().__init__(message)
        self.scanned = scanned


class CapExceededError(EsInferError):
    """Sample-size search hit its cap before reaching the target power."""

    def __init__(self, message: str, curve=None):
        super().__init__(message)
        self.curve = curve or []

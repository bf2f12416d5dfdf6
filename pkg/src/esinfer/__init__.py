"""Two-step joint quantile and expected-shortfall regression with inference."""

__version__ = "0.1.0"

from .covariance import (  # noqa: E402
    CovarianceEstimate,
    NIDConfig,
    PsiEstimate,
    bootstrap_cov,
    psi_iid,
    psi_nid,
    wald_covariance,
)
from .es import TwoStepFit, fit_joint_one_step, fit_two_step, joint_from_two_step  # noqa: E402
from .inference import (  # noqa: E402
    Partition,
    ScoreTestResult,
    score_ci,
    score_test,
    score_test_from_fit,
    wald_ci,
    wald_test,
)
from .kernels import BACKEND  # noqa: E402
from .model import Dataset, SpecFamily, Tail, TauLevel, Theta  # noqa: E402
from .quantile import fit_quantile  # noqa: E402

__all__ = [
    "BACKEND",
    "CovarianceEstimate",
    "Dataset",
    "NIDConfig",
    "Partition",
    "PsiEstimate",
    "ScoreTestResult",
    "SpecFamily",
    "Tail",
    "TauLevel",
    "Theta",
    "TwoStepFit",
    "bootstrap_cov",
    "fit_joint_one_step",
    "fit_quantile",
    "fit_two_step",
    "joint_from_two_step",
    "psi_iid",
    "psi_nid",
    "score_ci",
    "score_test",
    "score_test_from_fit",
    "wald_ci",
    "wald_covariance",
    "wald_test",
]

"""Backend selection for the hot kernels.

The compiled extension is used when importable; set ``ESINFER_PURE_PYTHON=1``
to force the numpy fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("ESINFER_PURE_PYTHON"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
        BACKEND = "python"

rq_fnb = _impl.rq_fnb
kde_truncated_moments = _impl.kde_truncated_moments
joint_loss_sum = _impl.joint_loss_sum

__all__ = ["BACKEND", "rq_fnb", "kde_truncated_moments", "joint_loss_sum"]

"""Backend selection for the hot kernels.

The numba backend is used when numba imports and the environment variable
``RC_KIT_DISABLE_NUMBA`` is unset or false; otherwise the pure-numpy path.
Both expose ``wls``, ``irls_logistic``, ``fit_coef`` and ``rc_batch`` with
identical semantics.
"""

from __future__ import annotations

import os

from . import _kernels_numpy as numpy_backend
from ._kernels_numpy import NONCONVERGED, OK, RANK_DEFICIENT, RANK_TOL, SEPARATED  # noqa: F401

DISABLE_ENV = "RC_KIT_DISABLE_NUMBA"


def _numba_requested() -> bool:
    return os.environ.get(DISABLE_ENV, "").strip().lower() not in {"1", "true", "yes", "on"}


numba_backend = None
if _numba_requested():
    try:
        from . import _kernels_numba as numba_backend
    except ImportError:  # pragma: no cover - numba missing
        numba_backend = None

_impl = numba_backend if numba_backend is not None else numpy_backend
BACKEND = "numba" if numba_backend is not None else "numpy"

wls = _impl.wls
irls_logistic = _impl.irls_logistic
fit_coef = _impl.fit_coef
rc_batch = _impl.rc_batch

"""Backend selection for the hot threshold-sweep kernel.

The compiled extension is used when it was built and
``FRAUDRL_PURE_PYTHON`` is unset; otherwise the numpy version runs. Both
return identical results.
"""

from __future__ import annotations

import os

import numpy as np

from . import _sweep_py

_compiled = None
if not os.environ.get("FRAUDRL_PURE_PYTHON"):
    try:
        from . import _sweep as _compiled
    except ImportError:
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
AVAILABLE = ("cython", "python") if _compiled is not None else ("python",)


def sweep_two_stage(p0, p1, fraud_w, w, thetas, backend: str | None = None):
    """Best (t0, t1) per recall target over all observed-score cut pairs.

    ``fraud_w`` and ``w`` are integer dollar amounts (fraud-only and all
    transactions). Returns ``(t0, t1, fraud_blocked, total_blocked,
    fraud_blocked_stage0, total_blocked_stage0, fraud_total)`` with one
    entry per theta; thresholds are NaN where no pair reaches the target.
    """
    backend = backend or BACKEND
    args = (
        np.ascontiguousarray(p0, dtype=np.float64),
        np.ascontiguousarray(p1, dtype=np.float64),
        np.ascontiguousarray(fraud_w, dtype=np.int64),
        np.ascontiguousarray(w, dtype=np.int64),
        np.ascontiguousarray(thetas, dtype=np.float64),
    )
    if backend == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernel is not available")
        return _compiled.sweep_two_stage(*args)
    if backend == "python":
        return _sweep_py.sweep_two_stage(*args)
    raise ValueError(f"unknown backend {backend!r}")

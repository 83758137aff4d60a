"""Kernel backend selection.

The hot inner loops (log-sum-exp, cluster assignment, and the per-step
loss/gradient objectives) exist twice: a Cython extension compiled at
install time and a pure-NumPy fallback. The compiled backend is used when
importable; set ``PREDSTAT_KERNELS=numpy`` or ``=cython`` to force one.
``BACKEND`` records which implementation is active.
"""
import os

from . import _numpy

_requested = os.environ.get("PREDSTAT_KERNELS", "").strip().lower()

if _requested in ("numpy", "py", "python"):
    _impl = _numpy
    BACKEND = "numpy"
elif _requested in ("cython", "c", "compiled"):
    from . import _speedups as _impl  # noqa: F401  (fail loudly when forced)

    BACKEND = "cython"
elif _requested:
    raise ValueError(f"unknown PREDSTAT_KERNELS value: {_requested!r}")
else:
    try:
        from . import _speedups as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _numpy
        BACKEND = "numpy"

logsumexp = _impl.logsumexp
cluster_assign = _impl.cluster_assign
cluster_objective = _impl.cluster_objective
ts_objective = _impl.ts_objective
clf_objective = _impl.clf_objective

__all__ = [
    "BACKEND",
    "logsumexp",
    "cluster_assign",
    "cluster_objective",
    "ts_objective",
    "clf_objective",
]

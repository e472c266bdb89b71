"""Kernel selection: compiled Cython filter if importable, else pure Python.

Set ``GTS_PURE_PYTHON=1`` to force the fallback.
"""

import os

_impl = None
if not os.environ.get("GTS_PURE_PYTHON"):
    try:
        from gts import _kalman as _impl
    except ImportError:
        _impl = None
if _impl is None:
    from gts import _kalman_py as _impl

BACKEND = "python" if _impl.__name__.endswith("_py") else "cython"
ConcentratedNLL = _impl.ConcentratedNLL
arma_filter = _impl.arma_filter
arma_loglik = _impl.arma_loglik
stationary_cov = _impl.stationary_cov

__all__ = ["BACKEND", "ConcentratedNLL", "arma_filter", "arma_loglik", "stationary_cov"]

"""Numerical kernels with a compiled core and a pure-Python fallback.

The compiled extension (``_core``, Cython) is preferred; set the environment
variable ``DARMA_PURE_PYTHON=1`` to force the NumPy reference backend.  Both
expose the same functions and agree to floating-point accuracy, so the choice
only affects speed (see ``benchmarks/bench_kernels.py``).
"""
import os

from . import _ref

if os.environ.get("DARMA_PURE_PYTHON"):
    _impl = _ref
else:
    try:
        from . import _core as _impl
    except ImportError:
        _impl = _ref

BACKEND = _impl.BACKEND

lgamma = _impl.lgamma
digamma = _impl.digamma
trigamma = _impl.trigamma
filter_path = _impl.filter_path
loglik = _impl.loglik
dirichlet_logpdf = _impl.dirichlet_logpdf


def backend_name():
    """Name of the active backend: ``"cython"`` or ``"python"``."""
    return BACKEND

"""Dirichlet ARMA forecasting for compositional time series.

Submodules
----------
simplex    compositions, flooring, additive log-ratio transform
dirichlet  special functions, Dirichlet density/sampling, digamma mean
model      state recursion, posterior, gradient, simulator
inference  Hamiltonian Monte Carlo, diagnostics, auto-refit
forecast   mean-path recursions, predictive draws, scoring rules
ingest     weekly bank-asset panel construction and diagnostics
harness    fixed-holdout and rolling-origin evaluation designs
cli        ``darma`` command-line entry point
"""
from ._kernels import backend_name

__version__ = "0.1.0"

__all__ = ["backend_name", "__version__"]

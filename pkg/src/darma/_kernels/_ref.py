"""Pure-NumPy reference implementation of the numerical kernels.

This module mirrors the compiled core in ``_core.pyx`` function for
function.  It is the fallback selected at import time when the extension is
missing (or when ``DARMA_PURE_PYTHON`` is set) and the ground truth the
compiled backend is tested against.

Conventions shared by both backends:

* a composition has ``J`` parts; its log-ratio coordinates have ``K = J - 1``
  entries ordered by ascending component index with the reference skipped;
* parameter blocks are ``A`` (P, K, K), ``B`` (Q, K, K), ``beta`` (K, M),
  ``gamma`` (R,); the flat layout is row-major ``A`` by lag, then ``B``, then
  ``beta`` column by column, then ``gamma``;
* the recursion conditions on the first ``max(P, Q)`` observations, whose
  innovations are pinned to zero.
"""
from __future__ import annotations

import math

import numpy as np

BACKEND = "python"

# tail coefficients B_{2n}/(2n) of the asymptotic psi series, n = 1..6
_PSI_TAIL = (
    1.0 / 12.0,
    1.0 / 120.0,
    1.0 / 252.0,
    1.0 / 240.0,
    1.0 / 132.0,
    691.0 / 32760.0,
)
# tail coefficients B_{2n} of the asymptotic trigamma series, n = 1..6
_TRI_TAIL = (
    1.0 / 6.0,
    1.0 / 30.0,
    1.0 / 42.0,
    1.0 / 30.0,
    5.0 / 66.0,
    691.0 / 2730.0,
)
# recurrence pushes arguments above this before the series is applied
_ASYMPTOTIC_MIN = 10.0

_lgamma_scalar = np.vectorize(math.lgamma, otypes=[np.float64])


def _wrap_scalar(x):
    arr = np.array(x, dtype=np.float64, copy=True)
    return arr.ndim == 0, np.atleast_1d(arr)


def lgamma(x):
    """Log-gamma, elementwise; scalar in, scalar out."""
    scalar, arr = _wrap_scalar(x)
    out = _lgamma_scalar(arr)
    return float(out[0]) if scalar else out


def digamma(x):
    """Digamma via upward recurrence plus the asymptotic series.

    Arguments must be positive; the caller owns the domain check.
    """
    scalar, arr = _wrap_scalar(x)
    acc = np.zeros_like(arr)
    while True:
        small = arr < _ASYMPTOTIC_MIN
        if not small.any():
            break
        acc[small] -= 1.0 / arr[small]
        arr[small] += 1.0
    r = 1.0 / arr
    r2 = r * r
    c1, c2, c3, c4, c5, c6 = _PSI_TAIL
    tail = r2 * (c1 - r2 * (c2 - r2 * (c3 - r2 * (c4 - r2 * (c5 - r2 * c6)))))
    out = acc + np.log(arr) - 0.5 * r - tail
    return float(out[0]) if scalar else out


def trigamma(x):
    """Trigamma via downward recurrence plus the asymptotic series."""
    scalar, arr = _wrap_scalar(x)
    acc = np.zeros_like(arr)
    while True:
        small = arr < _ASYMPTOTIC_MIN
        if not small.any():
            break
        acc[small] += 1.0 / (arr[small] * arr[small])
        arr[small] += 1.0
    r = 1.0 / arr
    r2 = r * r
    t1, t2, t3, t4, t5, t6 = _TRI_TAIL
    tail = r * r2 * (t1 - r2 * (t2 - r2 * (t3 - r2 * (t4 - r2 * (t5 - r2 * t6)))))
    out = acc + r + 0.5 * r2 + tail
    return float(out[0]) if scalar else out


def _alr_inv_row(eta_row, ref):
    """Softmax with a zero slot at ``ref``, shifted by the max for stability."""
    J = eta_row.shape[0] + 1
    full = np.empty(J)
    full[:ref] = eta_row[:ref]
    full[ref] = 0.0
    full[ref + 1:] = eta_row[ref:]
    w = np.exp(full - full.max())
    return w / w.sum()


def filter_path(alr_y, X, Z, A, B, beta, gamma, ref, centered, eps_shape):
    """Run the observation-driven recursion over a panel.

    Parameters
    ----------
    alr_y : (T, K) log-ratio transformed observations
    X, Z : (T, M) and (T, R) covariate designs
    A, B : (P, K, K) and (Q, K, K) lag matrices
    beta : (K, M) covariate coefficients
    gamma : (R,) log-precision coefficients
    ref : reference component index (0-based)
    centered : nonzero selects the mean-centered innovation
    eps_shape : floor applied to Dirichlet shapes before digamma

    Returns
    -------
    eta : (T, K) linear predictors (covariate-only before the burn-in ends)
    mu : (T, J) inverse-transformed means
    phi : (T,) precisions exp(Z gamma)
    eps : (T, K) innovations, zero over the first max(P, Q) rows
    """
    T, K = alr_y.shape
    J = K + 1
    P, Q = A.shape[0], B.shape[0]
    m0 = max(P, Q)
    comp = np.array([j for j in range(J) if j != ref])

    m = X @ beta.T
    u = alr_y - m
    phi = np.exp(Z @ gamma)
    eta = np.empty((T, K))
    mu = np.empty((T, J))
    eps = np.zeros((T, K))

    for t in range(T):
        if t < m0:
            eta[t] = m[t]
        else:
            row = m[t].copy()
            for p in range(P):
                row += A[p] @ u[t - p - 1]
            for q in range(Q):
                row += B[q] @ eps[t - q - 1]
            eta[t] = row
        mu[t] = _alr_inv_row(eta[t], ref)
        if t >= m0:
            if centered:
                alpha = np.maximum(phi[t] * mu[t], eps_shape)
                psi = digamma(alpha)
                eps[t] = alr_y[t] - (psi[comp] - psi[ref])
            else:
                eps[t] = alr_y[t] - eta[t]
    return eta, mu, phi, eps


def loglik(alr_y, log_y, X, Z, A, B, beta, gamma, ref, centered, eps_shape,
           want_grad):
    """Conditional Dirichlet log likelihood and (optionally) its gradient.

    The likelihood sums the Dirichlet log density of rows ``max(P, Q)`` .. T-1
    evaluated on the filtered path.  The gradient is exact reverse-mode
    accumulation through the recursion, the softmax inverse link, and the
    digamma centering term, returned flat in the documented parameter order.

    Returns ``(ll, grad)``; ``grad`` is None when ``want_grad`` is false, and
    ``ll`` is ``-inf`` when the path leaves the finite range.
    """
    T, K = alr_y.shape
    J = K + 1
    P, Q = A.shape[0], B.shape[0]
    M = beta.shape[1]
    R = gamma.shape[0]
    m0 = max(P, Q)
    comp = np.array([j for j in range(J) if j != ref])

    m = X @ beta.T
    u = alr_y - m
    with np.errstate(over="ignore"):
        phi = np.exp(Z @ gamma)
    eta = np.empty((T, K))
    mu = np.empty((T, J))
    eps = np.zeros((T, K))
    free = np.empty((T, J))
    psi_a = np.empty((T, J))
    psi0 = np.empty(T)
    tri_a = np.empty((T, J)) if centered else None

    ll = 0.0
    for t in range(T):
        if t < m0:
            eta[t] = m[t]
            mu[t] = _alr_inv_row(eta[t], ref)
            continue
        row = m[t].copy()
        for p in range(P):
            row += A[p] @ u[t - p - 1]
        for q in range(Q):
            row += B[q] @ eps[t - q - 1]
        eta[t] = row
        mu[t] = _alr_inv_row(eta[t], ref)
        if not np.isfinite(phi[t]):
            return -np.inf, (np.zeros(P * K * K + Q * K * K + K * M + R)
                             if want_grad else None)
        raw_alpha = phi[t] * mu[t]
        alpha = np.maximum(raw_alpha, eps_shape)
        free[t] = (raw_alpha >= eps_shape).astype(np.float64)
        alpha0 = alpha.sum()
        ll += float(lgamma(alpha0) - _lgamma_scalar(alpha).sum()
                    + ((alpha - 1.0) * log_y[t]).sum())
        psi_a[t] = digamma(alpha)
        psi0[t] = digamma(alpha0)
        if centered:
            tri_a[t] = trigamma(alpha)
            eps[t] = alr_y[t] - (psi_a[t][comp] - psi_a[t][ref])
        else:
            eps[t] = alr_y[t] - eta[t]

    if not np.isfinite(ll):
        return -np.inf, (np.zeros(P * K * K + Q * K * K + K * M + R)
                         if want_grad else None)
    if not want_grad:
        return ll, None

    Ab = np.zeros_like(A)
    Bb = np.zeros_like(B)
    gammab = np.zeros(R)
    mb = np.zeros((T, K))
    epsb = np.zeros((T, K))

    for t in range(T - 1, m0 - 1, -1):
        alpha = np.maximum(phi[t] * mu[t], eps_shape)
        alphab = free[t] * (psi0[t] - psi_a[t] + log_y[t])
        if centered:
            gb = -epsb[t]
            alphab[comp] += gb * tri_a[t][comp] * free[t][comp]
            alphab[ref] -= gb.sum() * tri_a[t][ref] * free[t][ref]
        phib = float(alphab @ mu[t])
        mub = alphab * phi[t]
        sdot = float(mub @ mu[t])
        etab = mu[t][comp] * (mub[comp] - sdot)
        if not centered:
            etab = etab - epsb[t]
        gammab += phib * phi[t] * Z[t]
        mb[t] += etab
        for p in range(P):
            s = t - p - 1
            Ab[p] += np.outer(etab, u[s])
            mb[s] -= A[p].T @ etab
        for q in range(Q):
            s = t - q - 1
            Bb[q] += np.outer(etab, eps[s])
            if s >= m0:
                epsb[s] += B[q].T @ etab

    betab = mb.T @ X
    grad = np.concatenate([Ab.ravel(), Bb.ravel(), betab.ravel(order="F"),
                           gammab])
    if not np.all(np.isfinite(grad)):
        return -np.inf, np.zeros_like(grad)
    return ll, grad


def dirichlet_logpdf(log_y, alpha):
    """Rows of Dirichlet log density: ``alpha`` is (S, J), ``log_y`` is (J,)."""
    alpha = np.asarray(alpha, dtype=np.float64)
    lg = _lgamma_scalar(alpha)
    return (_lgamma_scalar(alpha.sum(axis=1)) - lg.sum(axis=1)
            + (alpha - 1.0) @ log_y)

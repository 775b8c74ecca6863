# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled numerical kernels.

Same contracts as the pure-NumPy reference backend (``_ref``); see that
module for the shared conventions.  Scalar special functions use upward
recurrence past 10 followed by the asymptotic tail.
"""
from libc.math cimport exp, isfinite, lgamma as c_lgamma, log

import numpy as np

BACKEND = "cython"

cdef double ASYMPTOTIC_MIN = 10.0


cdef double _digamma(double x) nogil:
    cdef double acc = 0.0
    cdef double r, r2
    while x < ASYMPTOTIC_MIN:
        acc -= 1.0 / x
        x += 1.0
    r = 1.0 / x
    r2 = r * r
    return acc + log(x) - 0.5 * r - r2 * (
        1.0 / 12.0 - r2 * (1.0 / 120.0 - r2 * (1.0 / 252.0 - r2 * (
            1.0 / 240.0 - r2 * (1.0 / 132.0 - r2 * (691.0 / 32760.0))))))


cdef double _trigamma(double x) nogil:
    cdef double acc = 0.0
    cdef double r, r2
    while x < ASYMPTOTIC_MIN:
        acc += 1.0 / (x * x)
        x += 1.0
    r = 1.0 / x
    r2 = r * r
    return acc + r + 0.5 * r2 + r * r2 * (
        1.0 / 6.0 - r2 * (1.0 / 30.0 - r2 * (1.0 / 42.0 - r2 * (
            1.0 / 30.0 - r2 * (5.0 / 66.0 - r2 * (691.0 / 2730.0))))))


def _elementwise(fn_code, x):
    cdef double[::1] flat
    cdef Py_ssize_t i, n
    cdef int code = fn_code
    arr = np.array(x, dtype=np.float64, copy=True)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    out = np.ascontiguousarray(arr.ravel())
    flat = out
    n = flat.shape[0]
    with nogil:
        for i in range(n):
            if code == 0:
                flat[i] = _digamma(flat[i])
            elif code == 1:
                flat[i] = _trigamma(flat[i])
            else:
                flat[i] = c_lgamma(flat[i])
    out = out.reshape(arr.shape)
    return float(out[0]) if scalar else out


def digamma(x):
    """Digamma, elementwise; arguments must be positive."""
    return _elementwise(0, x)


def trigamma(x):
    """Trigamma, elementwise; arguments must be positive."""
    return _elementwise(1, x)


def lgamma(x):
    """Log-gamma, elementwise."""
    return _elementwise(2, x)


cdef void _softmax_row(double[::1] eta_row, double[::1] mu_row,
                       Py_ssize_t ref) nogil:
    cdef Py_ssize_t K = eta_row.shape[0]
    cdef Py_ssize_t j, k
    cdef double hi = 0.0
    cdef double tot = 0.0
    k = 0
    for j in range(K + 1):
        if j == ref:
            mu_row[j] = 0.0
        else:
            mu_row[j] = eta_row[k]
            k += 1
        if mu_row[j] > hi:
            hi = mu_row[j]
    for j in range(K + 1):
        mu_row[j] = exp(mu_row[j] - hi)
        tot += mu_row[j]
    for j in range(K + 1):
        mu_row[j] /= tot


def filter_path(double[:, ::1] alr_y, double[:, ::1] X, double[:, ::1] Z,
                double[:, :, ::1] A, double[:, :, ::1] B,
                double[:, ::1] beta, double[::1] gamma,
                Py_ssize_t ref, int centered, double eps_shape):
    """Recursion over the panel; see ``_ref.filter_path``."""
    cdef Py_ssize_t T = alr_y.shape[0]
    cdef Py_ssize_t K = alr_y.shape[1]
    cdef Py_ssize_t J = K + 1
    cdef Py_ssize_t P = A.shape[0]
    cdef Py_ssize_t Q = B.shape[0]
    cdef Py_ssize_t M = X.shape[1]
    cdef Py_ssize_t R = Z.shape[1]
    cdef Py_ssize_t m0 = P if P > Q else Q
    cdef Py_ssize_t t, p, q, j, k, i, s

    eta_np = np.empty((T, K))
    mu_np = np.empty((T, J))
    phi_np = np.empty(T)
    eps_np = np.zeros((T, K))
    u_np = np.empty((T, K))
    m_np = np.empty((T, K))
    psi_np = np.empty(J)
    cdef double[:, ::1] eta = eta_np
    cdef double[:, ::1] mu = mu_np
    cdef double[::1] phi = phi_np
    cdef double[:, ::1] eps = eps_np
    cdef double[:, ::1] u = u_np
    cdef double[:, ::1] m = m_np
    cdef double[::1] psi = psi_np
    cdef double acc, alpha_j

    with nogil:
        for t in range(T):
            acc = 0.0
            for i in range(R):
                acc += Z[t, i] * gamma[i]
            phi[t] = exp(acc)
            for k in range(K):
                acc = 0.0
                for i in range(M):
                    acc += beta[k, i] * X[t, i]
                m[t, k] = acc
                u[t, k] = alr_y[t, k] - acc
        for t in range(T):
            if t < m0:
                for k in range(K):
                    eta[t, k] = m[t, k]
                _softmax_row(eta[t], mu[t], ref)
                continue
            for k in range(K):
                acc = m[t, k]
                for p in range(P):
                    s = t - p - 1
                    for i in range(K):
                        acc += A[p, k, i] * u[s, i]
                for q in range(Q):
                    s = t - q - 1
                    for i in range(K):
                        acc += B[q, k, i] * eps[s, i]
                eta[t, k] = acc
            _softmax_row(eta[t], mu[t], ref)
            if centered:
                for j in range(J):
                    alpha_j = phi[t] * mu[t, j]
                    if alpha_j < eps_shape:
                        alpha_j = eps_shape
                    psi[j] = _digamma(alpha_j)
                k = 0
                for j in range(J):
                    if j == ref:
                        continue
                    eps[t, k] = alr_y[t, k] - (psi[j] - psi[ref])
                    k += 1
            else:
                for k in range(K):
                    eps[t, k] = alr_y[t, k] - eta[t, k]
    return eta_np, mu_np, phi_np, eps_np


def loglik(double[:, ::1] alr_y, double[:, ::1] log_y, double[:, ::1] X,
           double[:, ::1] Z, double[:, :, ::1] A, double[:, :, ::1] B,
           double[:, ::1] beta, double[::1] gamma, Py_ssize_t ref,
           int centered, double eps_shape, int want_grad):
    """Conditional log likelihood and reverse-mode gradient; see ``_ref``."""
    cdef Py_ssize_t T = alr_y.shape[0]
    cdef Py_ssize_t K = alr_y.shape[1]
    cdef Py_ssize_t J = K + 1
    cdef Py_ssize_t P = A.shape[0]
    cdef Py_ssize_t Q = B.shape[0]
    cdef Py_ssize_t M = X.shape[1]
    cdef Py_ssize_t R = Z.shape[1]
    cdef Py_ssize_t m0 = P if P > Q else Q
    cdef Py_ssize_t D = (P + Q) * K * K + K * M + R
    cdef Py_ssize_t t, p, q, j, k, i, s

    eta_np = np.empty((T, K))
    mu_np = np.empty((T, J))
    phi_np = np.empty(T)
    eps_np = np.zeros((T, K))
    u_np = np.empty((T, K))
    m_np = np.empty((T, K))
    cdef double[:, ::1] eta = eta_np
    cdef double[:, ::1] mu = mu_np
    cdef double[::1] phi = phi_np
    cdef double[:, ::1] eps = eps_np
    cdef double[:, ::1] u = u_np
    cdef double[:, ::1] m = m_np

    cdef double[:, ::1] psi_a = None
    cdef double[:, ::1] tri_a = None
    cdef double[:, ::1] free = None
    cdef double[::1] psi0 = None
    if want_grad:
        psi_a = np.empty((T, J))
        free = np.empty((T, J))
        psi0 = np.empty(T)
        if centered:
            tri_a = np.empty((T, J))

    alpha_np = np.empty(J)
    psi_loc_np = np.empty(J)
    cdef double[::1] alpha = alpha_np
    cdef double[::1] psi_loc = psi_loc_np
    cdef double ll = 0.0
    cdef double acc, alpha0, raw_a
    cdef int bad = 0

    with nogil:
        for t in range(T):
            acc = 0.0
            for i in range(R):
                acc += Z[t, i] * gamma[i]
            phi[t] = exp(acc)
            for k in range(K):
                acc = 0.0
                for i in range(M):
                    acc += beta[k, i] * X[t, i]
                m[t, k] = acc
                u[t, k] = alr_y[t, k] - acc
        for t in range(T):
            if bad:
                break
            if t < m0:
                for k in range(K):
                    eta[t, k] = m[t, k]
                _softmax_row(eta[t], mu[t], ref)
                continue
            for k in range(K):
                acc = m[t, k]
                for p in range(P):
                    s = t - p - 1
                    for i in range(K):
                        acc += A[p, k, i] * u[s, i]
                for q in range(Q):
                    s = t - q - 1
                    for i in range(K):
                        acc += B[q, k, i] * eps[s, i]
                eta[t, k] = acc
            _softmax_row(eta[t], mu[t], ref)
            if not isfinite(phi[t]):
                bad = 1
                break
            alpha0 = 0.0
            for j in range(J):
                raw_a = phi[t] * mu[t, j]
                if raw_a < eps_shape:
                    alpha[j] = eps_shape
                    if want_grad:
                        free[t, j] = 0.0
                else:
                    alpha[j] = raw_a
                    if want_grad:
                        free[t, j] = 1.0
                alpha0 += alpha[j]
                ll += (alpha[j] - 1.0) * log_y[t, j] - c_lgamma(alpha[j])
            ll += c_lgamma(alpha0)
            if centered or want_grad:
                for j in range(J):
                    psi_loc[j] = _digamma(alpha[j])
                if want_grad:
                    for j in range(J):
                        psi_a[t, j] = psi_loc[j]
                    psi0[t] = _digamma(alpha0)
                    if centered:
                        for j in range(J):
                            tri_a[t, j] = _trigamma(alpha[j])
            if centered:
                k = 0
                for j in range(J):
                    if j == ref:
                        continue
                    eps[t, k] = alr_y[t, k] - (psi_loc[j] - psi_loc[ref])
                    k += 1
            else:
                for k in range(K):
                    eps[t, k] = alr_y[t, k] - eta[t, k]

    if bad or not isfinite(ll):
        return -np.inf, (np.zeros(D) if want_grad else None)
    if not want_grad:
        return ll, None

    Ab_np = np.zeros((P, K, K))
    Bb_np = np.zeros((Q, K, K))
    gammab_np = np.zeros(R)
    mb_np = np.zeros((T, K))
    epsb_np = np.zeros((T, K))
    alphab_np = np.empty(J)
    mub_np = np.empty(J)
    etab_np = np.empty(K)
    cdef double[:, :, ::1] Ab = Ab_np
    cdef double[:, :, ::1] Bb = Bb_np
    cdef double[::1] gammab = gammab_np
    cdef double[:, ::1] mb = mb_np
    cdef double[:, ::1] epsb = epsb_np
    cdef double[::1] alphab = alphab_np
    cdef double[::1] mub = mub_np
    cdef double[::1] etab = etab_np
    cdef double phib, sdot, sum_gb, gb_k

    with nogil:
        for t in range(T - 1, m0 - 1, -1):
            for j in range(J):
                alphab[j] = free[t, j] * (psi0[t] - psi_a[t, j] + log_y[t, j])
            if centered:
                sum_gb = 0.0
                k = 0
                for j in range(J):
                    if j == ref:
                        continue
                    gb_k = -epsb[t, k]
                    sum_gb += gb_k
                    alphab[j] += gb_k * tri_a[t, j] * free[t, j]
                    k += 1
                alphab[ref] -= sum_gb * tri_a[t, ref] * free[t, ref]
            phib = 0.0
            sdot = 0.0
            for j in range(J):
                phib += alphab[j] * mu[t, j]
                mub[j] = alphab[j] * phi[t]
                sdot += mub[j] * mu[t, j]
            k = 0
            for j in range(J):
                if j == ref:
                    continue
                etab[k] = mu[t, j] * (mub[j] - sdot)
                if not centered:
                    etab[k] -= epsb[t, k]
                k += 1
            for i in range(R):
                gammab[i] += phib * phi[t] * Z[t, i]
            for k in range(K):
                mb[t, k] += etab[k]
            for p in range(P):
                s = t - p - 1
                for k in range(K):
                    for i in range(K):
                        Ab[p, k, i] += etab[k] * u[s, i]
                        mb[s, i] -= A[p, k, i] * etab[k]
            for q in range(Q):
                s = t - q - 1
                for k in range(K):
                    for i in range(K):
                        Bb[q, k, i] += etab[k] * eps[s, i]
                        if s >= m0:
                            epsb[s, i] += B[q, k, i] * etab[k]

    betab_np = mb_np.T @ np.asarray(X)
    grad = np.concatenate([Ab_np.ravel(), Bb_np.ravel(),
                           betab_np.ravel(order="F"), gammab_np])
    if not np.all(np.isfinite(grad)):
        return -np.inf, np.zeros(D)
    return ll, grad


def dirichlet_logpdf(log_y, alpha):
    """Rows of Dirichlet log density: ``alpha`` is (S, J), ``log_y`` is (J,)."""
    cdef double[:, ::1] a = np.ascontiguousarray(alpha, dtype=np.float64)
    cdef double[::1] ly = np.ascontiguousarray(log_y, dtype=np.float64)
    cdef Py_ssize_t S = a.shape[0]
    cdef Py_ssize_t J = a.shape[1]
    out_np = np.empty(S)
    cdef double[::1] out = out_np
    cdef Py_ssize_t s, j
    cdef double acc, tot
    with nogil:
        for s in range(S):
            acc = 0.0
            tot = 0.0
            for j in range(J):
                tot += a[s, j]
                acc += (a[s, j] - 1.0) * ly[j] - c_lgamma(a[s, j])
            out[s] = acc + c_lgamma(tot)
    return out_np

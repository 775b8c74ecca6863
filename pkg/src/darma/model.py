"""Dirichlet ARMA state recursion, log posterior, gradient, and simulator.

The linear predictor of the log-ratio mean evolves as

    eta_t = X_t beta + sum_p A_p (alr(y_{t-p}) - X_{t-p} beta)
                     + sum_q B_q eps_{t-q},
    phi_t = exp(Z_t gamma),

with the innovation ``eps_t`` either the raw residual ``alr(y_t) - eta_t`` or
the centered one ``alr(y_t) - alr_mean(mu_t, phi_t)`` whose conditional mean
is zero.  The likelihood conditions on the first ``max(P, Q)`` observations
and pins their innovations to zero.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels, dirichlet, simplex
from .errors import InvalidInput, NumericalError
from .panel import SeriesPanel

RAW = "raw"
CENTERED = "centered"

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class DarmaSpec:
    """Model orders and dimensions; ``variant`` picks the innovation."""

    P: int
    Q: int
    J: int
    ref_index: int
    variant: str
    M: int = 1
    R_phi: int = 2

    def __post_init__(self):
        if self.P < 0 or self.Q < 0:
            raise InvalidInput("lag orders must be nonnegative")
        if self.J < 2:
            raise InvalidInput("need at least two components")
        if not 0 <= self.ref_index < self.J:
            raise InvalidInput("reference index outside the composition")
        if self.variant not in (RAW, CENTERED):
            raise InvalidInput(f"unknown variant {self.variant!r}")
        if self.M < 1 or self.R_phi < 1:
            raise InvalidInput("covariate counts must be positive")

    @property
    def K(self):
        return self.J - 1

    @property
    def burn_in(self):
        return max(self.P, self.Q)

    @property
    def dim(self):
        K = self.K
        return (self.P + self.Q) * K * K + K * self.M + self.R_phi


def variant_pair(spec):
    """The (raw, centered) pair sharing everything but the innovation."""
    return {RAW: replace(spec, variant=RAW),
            CENTERED: replace(spec, variant=CENTERED)}


@dataclass
class DarmaParams:
    """Lag matrices, covariate coefficients, and log-precision coefficients.

    The flat layout is row-major ``A`` by lag, then ``B``, then ``beta``
    column by column, then ``gamma``.
    """

    A: np.ndarray
    B: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        self.A = np.ascontiguousarray(self.A, dtype=np.float64)
        self.B = np.ascontiguousarray(self.B, dtype=np.float64)
        self.beta = np.ascontiguousarray(self.beta, dtype=np.float64)
        self.gamma = np.ascontiguousarray(self.gamma, dtype=np.float64)
        for block in (self.A, self.B, self.beta, self.gamma):
            if not np.all(np.isfinite(block)):
                raise InvalidInput("parameters must be finite")

    @classmethod
    def zeros(cls, spec):
        K = spec.K
        return cls(np.zeros((spec.P, K, K)), np.zeros((spec.Q, K, K)),
                   np.zeros((K, spec.M)), np.zeros(spec.R_phi))

    @classmethod
    def unflatten(cls, spec, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (spec.dim,):
            raise InvalidInput(f"expected {spec.dim} parameters")
        K = spec.K
        na, nb = spec.P * K * K, spec.Q * K * K
        off = 0
        A = theta[off:off + na].reshape(spec.P, K, K)
        off += na
        B = theta[off:off + nb].reshape(spec.Q, K, K)
        off += nb
        beta = theta[off:off + K * spec.M].reshape(spec.M, K).T
        off += K * spec.M
        return cls(A, B, beta, theta[off:])

    def flatten(self):
        return np.concatenate([self.A.ravel(), self.B.ravel(),
                               self.beta.ravel(order="F"), self.gamma])


def param_names(spec):
    """Column labels in flat order, e.g. ``A1.2.3`` for row 2, column 3."""
    K = spec.K
    names = [f"A{p + 1}.{i + 1}.{j + 1}" for p in range(spec.P)
             for i in range(K) for j in range(K)]
    names += [f"B{q + 1}.{i + 1}.{j + 1}" for q in range(spec.Q)
              for i in range(K) for j in range(K)]
    names += [f"beta.{i + 1}.{m + 1}" for m in range(spec.M)
              for i in range(K)]
    names += [f"gamma.{r + 1}" for r in range(spec.R_phi)]
    return names


@dataclass(frozen=True)
class Priors:
    """Elementwise zero-mean normal prior scales."""

    sd_ar: float = 0.5
    sd_ma: float = 0.5
    sd_beta: float = 1.0
    sd_gamma: float = 1.0

    def sd_vector(self, spec):
        K = spec.K
        return np.concatenate([
            np.full(spec.P * K * K, self.sd_ar),
            np.full(spec.Q * K * K, self.sd_ma),
            np.full(K * spec.M, self.sd_beta),
            np.full(spec.R_phi, self.sd_gamma),
        ])


DEFAULT_PRIORS = Priors()


@dataclass
class StatePath:
    """Filtered path: predictors, means, precisions, and innovations.

    ``alr_y`` keeps the transformed observations the path was filtered on so
    forecasting can rebuild either innovation definition.
    """

    eta: np.ndarray
    mu: np.ndarray
    phi: np.ndarray
    eps: np.ndarray
    alr_y: np.ndarray


def _check_panel(spec, panel):
    if panel.J != spec.J:
        raise InvalidInput(f"panel has {panel.J} parts, spec wants {spec.J}")
    if panel.X.shape[1] != spec.M or panel.Z.shape[1] != spec.R_phi:
        raise InvalidInput("design matrices do not match the spec")
    if panel.T <= spec.burn_in:
        raise InvalidInput("panel shorter than the burn-in window")


def filter(spec, params, panel):
    """Run the recursion over a panel; deterministic and pure."""
    _check_panel(spec, panel)
    alr_y = np.ascontiguousarray(simplex.alr(panel.Y, spec.ref_index))
    eta, mu, phi, eps = _kernels.filter_path(
        alr_y, panel.X, panel.Z, params.A, params.B, params.beta,
        params.gamma, spec.ref_index, int(spec.variant == CENTERED),
        dirichlet.EPS_SHAPE)
    return StatePath(eta, mu, phi, eps, alr_y)


def _data_arrays(spec, panel):
    _check_panel(spec, panel)
    alr_y = np.ascontiguousarray(simplex.alr(panel.Y, spec.ref_index))
    log_y = np.ascontiguousarray(np.log(panel.Y))
    return alr_y, log_y


def log_likelihood(spec, params, panel):
    """Dirichlet log likelihood conditioned on the first max(P, Q) rows."""
    alr_y, log_y = _data_arrays(spec, panel)
    ll, _ = _kernels.loglik(alr_y, log_y, panel.X, panel.Z, params.A,
                            params.B, params.beta, params.gamma,
                            spec.ref_index, int(spec.variant == CENTERED),
                            dirichlet.EPS_SHAPE, 0)
    return ll


def log_prior(spec, params, priors=DEFAULT_PRIORS):
    """Sum of elementwise normal log densities, constants included."""
    theta = params.flatten() if isinstance(params, DarmaParams) \
        else np.asarray(params, dtype=np.float64)
    sd = priors.sd_vector(spec)
    return float(-0.5 * LOG_2PI * theta.size - np.log(sd).sum()
                 - 0.5 * ((theta / sd) ** 2).sum())


def grad_log_prior(spec, params, priors=DEFAULT_PRIORS):
    """Score of the prior: ``-theta / sd**2`` in flat order."""
    theta = params.flatten() if isinstance(params, DarmaParams) \
        else np.asarray(params, dtype=np.float64)
    sd = priors.sd_vector(spec)
    return -theta / (sd * sd)


def log_posterior(spec, params, panel, priors=DEFAULT_PRIORS):
    return log_likelihood(spec, params, panel) + log_prior(spec, params,
                                                           priors)


def logpost_and_grad(spec, params, panel, priors=DEFAULT_PRIORS,
                     _data=None):
    """Log posterior and its gradient in one pass (the sampler hot path)."""
    alr_y, log_y = _data if _data is not None else _data_arrays(spec, panel)
    ll, grad = _kernels.loglik(alr_y, log_y, panel.X, panel.Z, params.A,
                               params.B, params.beta, params.gamma,
                               spec.ref_index,
                               int(spec.variant == CENTERED),
                               dirichlet.EPS_SHAPE, 1)
    if not np.isfinite(ll):
        return -np.inf, np.zeros(spec.dim)
    lp = ll + log_prior(spec, params, priors)
    return lp, grad + grad_log_prior(spec, params, priors)


def grad_log_posterior(spec, params, panel, priors=DEFAULT_PRIORS):
    """Gradient with respect to the flat parameter vector."""
    lp, grad = logpost_and_grad(spec, params, panel, priors)
    if not np.all(np.isfinite(grad)) or not np.isfinite(lp):
        bad = int(np.flatnonzero(~np.isfinite(grad))[0]) \
            if not np.all(np.isfinite(grad)) else -1
        raise NumericalError(f"non-finite gradient (coordinate {bad})")
    return grad


def make_logpost_fn(spec, panel, priors=DEFAULT_PRIORS):
    """Closure ``theta -> (lp, grad)`` over precomputed data arrays."""
    data = _data_arrays(spec, panel)
    X, Z = panel.X, panel.Z
    ref = spec.ref_index
    centered = int(spec.variant == CENTERED)
    sd = priors.sd_vector(spec)
    inv_var = 1.0 / (sd * sd)
    prior_const = float(-0.5 * LOG_2PI * spec.dim - np.log(sd).sum())
    K = spec.K
    na, nb = spec.P * K * K, spec.Q * K * K

    def logpost(theta):
        theta = np.ascontiguousarray(theta, dtype=np.float64)
        A = theta[:na].reshape(spec.P, K, K)
        B = theta[na:na + nb].reshape(spec.Q, K, K)
        beta = np.ascontiguousarray(
            theta[na + nb:na + nb + K * spec.M].reshape(spec.M, K).T)
        gamma = theta[na + nb + K * spec.M:]
        ll, grad = _kernels.loglik(data[0], data[1], X, Z, A, B, beta, gamma,
                                   ref, centered, dirichlet.EPS_SHAPE, 1)
        if not np.isfinite(ll):
            return -np.inf, np.zeros(spec.dim)
        lp = ll + prior_const - 0.5 * float(theta @ (inv_var * theta))
        return lp, grad - inv_var * theta

    return logpost


def simulate(spec, params, T, X, Z, rng_seed, eps_prob=simplex.EPS_PROB):
    """Draw a synthetic panel forward through the recursion.

    The first ``max(P, Q)`` rows are independent draws from
    ``Dirichlet(exp(gamma_0) * alr_inv(X_1 beta))``; subsequent rows follow
    filter-then-sample under the chosen innovation variant.  Same seed, same
    panel.
    """
    X = np.asarray(X, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    if T <= spec.burn_in:
        raise InvalidInput("T must exceed the burn-in window")
    if X.shape != (T, spec.M) or Z.shape != (T, spec.R_phi):
        raise InvalidInput("covariate shapes do not match the spec")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) \
        else np.random.default_rng(rng_seed)
    K, J, ref = spec.K, spec.J, spec.ref_index
    m0 = spec.burn_in
    centered = spec.variant == CENTERED

    m = X @ params.beta.T
    phi = np.exp(Z @ params.gamma)
    Y = np.empty((T, J))
    alr_y = np.empty((T, K))
    eps = np.zeros((T, K))

    mu_init = simplex.alr_inv(m[0], ref)
    phi_init = float(np.exp(params.gamma[0]))
    for t in range(T):
        if t < m0:
            mu_t, phi_t = mu_init, phi_init
        else:
            eta_t = m[t].copy()
            for p in range(spec.P):
                eta_t += params.A[p] @ (alr_y[t - p - 1] - m[t - p - 1])
            for q in range(spec.Q):
                eta_t += params.B[q] @ eps[t - q - 1]
            if not np.all(np.isfinite(eta_t)):
                raise NumericalError(f"simulated path diverged at row {t}")
            mu_t, phi_t = simplex.alr_inv(eta_t, ref), float(phi[t])
            if not np.all(mu_t > 0.0):
                raise NumericalError(
                    f"simulated path degenerated to the boundary at row {t}")
        Y[t] = dirichlet.sample(phi_t * mu_t, 1, rng, eps_prob=eps_prob)[0]
        alr_y[t] = simplex.alr(Y[t], ref)
        if t >= m0:
            if centered:
                eps[t] = alr_y[t] - dirichlet.alr_mean(mu_t, phi_t, ref)
            else:
                eps[t] = alr_y[t] - eta_t

    dates = synthetic_dates(T)
    z_raw = Z[:, 1].copy() if spec.R_phi > 1 else np.zeros(T)
    meta = {"components": [str(j + 1) for j in range(J)],
            "ref_index": ref, "variant": spec.variant, "synthetic": True,
            "m": spec.M, "r_phi": spec.R_phi, "floor": eps_prob}
    return SeriesPanel(dates, Y, X, Z, z_raw, meta)


def synthetic_dates(T, start="2015-01-07"):
    """Weekly ISO dates for synthetic panels."""
    import datetime

    d0 = datetime.date.fromisoformat(start)
    return [(d0 + datetime.timedelta(weeks=t)).isoformat() for t in range(T)]

"""Shared test helpers: stable model setups and simulated panels."""
import numpy as np

from darma import model


def stable_params(spec, log_phi=np.log(200.0), gamma1=0.15):
    """Hand-set stable coefficients at H.8-like share levels."""
    K = spec.K
    if K == 3:
        A = np.array([[[0.5, 0.05, 0.0], [0.0, 0.4, 0.05],
                       [0.05, 0.0, 0.45]]]) * np.ones((max(spec.P, 1), 1, 1))
        B = np.array([[[0.3, 0.0, 0.05], [0.05, 0.25, 0.0],
                       [0.0, 0.05, 0.3]]]) * np.ones((max(spec.Q, 1), 1, 1))
        beta = np.array([[-1.10], [-1.53], [-2.15]])
    else:
        A = 0.4 * np.stack([np.eye(K)] * max(spec.P, 1))
        B = 0.3 * np.stack([np.eye(K)] * max(spec.Q, 1))
        beta = np.linspace(-0.5, -1.5, K).reshape(K, 1)
    gamma = np.array([log_phi] + [gamma1] * (spec.R_phi - 1))
    return model.DarmaParams(A[:spec.P] / max(1, spec.P),
                             B[:spec.Q] / max(1, spec.Q),
                             np.tile(beta, (1, spec.M)), gamma)


def balanced_params(spec, log_phi=np.log(50.0), gamma1=0.1, ar=0.1,
                    ma=0.2, mu_target=(0.32, 0.20, 0.33, 0.15)):
    """Interior-safe coefficients for low-precision simulations.

    Mean shares stay far enough inside the simplex that every Dirichlet
    shape clears one even at precision ~20; the weak autoregression keeps
    extreme log-ratio draws from cascading toward the boundary.
    """
    from darma import simplex

    K = spec.K
    A = ar * np.stack([np.eye(K)] * max(spec.P, 1))
    B = ma * np.stack([np.eye(K)] * max(spec.Q, 1))
    if K >= 2:
        A[:, 0, 1] = ar / 4.0
        B[:, 1, 0] = ma / 4.0
    mu = np.asarray(mu_target[:spec.J], dtype=float)
    mu = mu / mu.sum()
    beta = simplex.alr(mu, spec.ref_index).reshape(K, 1)
    gamma = np.array([log_phi] + [gamma1] * (spec.R_phi - 1))
    return model.DarmaParams(A[:spec.P], B[:spec.Q],
                             np.tile(beta, (1, spec.M)), gamma)


def sin_designs(T, M=1, R=2, period=7.0):
    X = np.ones((T, M))
    Z = np.ones((T, R))
    if R > 1:
        Z[:, 1] = np.sin(np.arange(T) / period)
    return X, Z


def simulate_panel(spec, params=None, T=300, seed=42, **kw):
    params = params or stable_params(spec, **kw)
    X, Z = sin_designs(T, spec.M, spec.R_phi)
    return model.simulate(spec, params, T, X, Z, rng_seed=seed), params

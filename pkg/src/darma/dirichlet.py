"""Dirichlet kernel: special functions, log density, gamma-normalization
sampling, and the digamma form of the conditional log-ratio mean.

Shapes are plain positive arrays ``alpha`` with total ``alpha0 = alpha.sum()``.
Every entry is floored at :data:`EPS_SHAPE` before digamma or gamma
evaluations; the floor only guards numerics and never binds at statistically
meaningful scales.
"""
from __future__ import annotations

import numpy as np

from . import _kernels, simplex
from .errors import InvalidInput

#: floor applied to Dirichlet shape parameters
EPS_SHAPE = 1e-10


def digamma(x):
    """Digamma function; domain is the positive reals."""
    if np.any(np.asarray(x) <= 0.0):
        raise InvalidInput("digamma domain is x > 0")
    return _kernels.digamma(x)


def trigamma(x):
    """Trigamma function; domain is the positive reals."""
    if np.any(np.asarray(x) <= 0.0):
        raise InvalidInput("trigamma domain is x > 0")
    return _kernels.trigamma(x)


def floor_shape(alpha, eps_shape=EPS_SHAPE):
    """Validate a shape vector and floor its entries at ``eps_shape``."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if not np.all(np.isfinite(alpha)):
        raise InvalidInput("shape parameters must be finite")
    if np.any(alpha < 0.0):
        raise InvalidInput("shape parameters must be nonnegative")
    return np.maximum(alpha, eps_shape)


def log_density(y, alpha, eps_shape=EPS_SHAPE):
    """Dirichlet log density of composition ``y`` under shape ``alpha``.

    Boundary compositions are rejected rather than scored at ``-inf``; floor
    the data first (:func:`darma.simplex.floor_and_close`).
    """
    y = simplex.validate_composition(y)
    alpha = floor_shape(alpha, eps_shape)
    if y.shape[-1] != alpha.shape[-1]:
        raise InvalidInput("composition and shape dimensions differ")
    return float(
        _kernels.lgamma(alpha.sum()) - _kernels.lgamma(alpha).sum()
        + ((alpha - 1.0) * np.log(y)).sum()
    )


def _sample_gamma(rng, shape):
    """Marsaglia-Tsang gamma variates with unit scale, vectorized.

    Shapes below one are boosted: draw at ``shape + 1`` and multiply by
    ``U**(1/shape)``.  Rejections are redrawn in batches, so the stream
    consumed from ``rng`` depends only on the seed and the shape values.
    """
    a = np.asarray(shape, dtype=np.float64)
    flat = a.ravel()
    small = flat < 1.0
    d = np.where(small, flat + 1.0, flat) - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    out = np.empty(flat.shape)
    todo = np.arange(flat.size)
    while todo.size:
        x = rng.standard_normal(todo.size)
        v = (1.0 + c[todo] * x) ** 3
        u = rng.random(todo.size)
        pos = v > 0.0
        logv = np.where(pos, np.log(np.where(pos, v, 1.0)), 0.0)
        accept = pos & (
            (u < 1.0 - 0.0331 * x ** 4)
            | (np.log(u) < 0.5 * x * x + d[todo] * (1.0 - v + logv))
        )
        hit = todo[accept]
        out[hit] = d[hit] * v[accept]
        todo = todo[~accept]
    if small.any():
        boost = rng.random(int(small.sum())) ** (1.0 / flat[small])
        out[small] *= boost
    return out.reshape(a.shape)


def sample(alpha, n, rng_seed, eps_shape=EPS_SHAPE, eps_prob=simplex.EPS_PROB):
    """Draw ``n`` compositions from Dirichlet(``alpha``) by gamma normalization.

    ``rng_seed`` may be an integer or an already-constructed NumPy generator;
    identical seeds reproduce the draw set exactly.  Draws are floored and
    closed, so every row is a valid interior composition.
    """
    if n < 1:
        raise InvalidInput("need at least one draw")
    alpha = floor_shape(alpha, eps_shape)
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) \
        else np.random.default_rng(rng_seed)
    g = _sample_gamma(rng, np.broadcast_to(alpha, (n, alpha.shape[-1])))
    return simplex.floor_and_close(g / g.sum(axis=-1, keepdims=True), eps_prob)


def alr_mean(mu, phi, ref, eps_shape=EPS_SHAPE):
    """Conditional mean of ``alr(Y)`` for ``Y ~ Dirichlet(phi * mu)``.

    Componentwise this is the digamma difference
    ``psi(phi * mu_j) - psi(phi * mu_ref)``; shapes are floored at
    ``eps_shape`` first.
    """
    mu = np.asarray(mu, dtype=np.float64)
    if phi <= 0.0:
        raise InvalidInput("precision must be positive")
    if not np.all(mu > 0.0):
        raise InvalidInput("mean composition must be strictly positive")
    alpha = np.maximum(phi * mu, eps_shape)
    psi = _kernels.digamma(alpha)
    J = mu.shape[-1]
    keep = [j for j in range(J) if j != ref]
    return psi[..., keep] - psi[..., ref:ref + 1]


def alr_mean_expansion(mu, phi, ref):
    """Two-term large-precision expansion of :func:`alr_mean`.

    ``log(mu_j / mu_ref) - (1 / (2 phi)) (1 / mu_j - 1 / mu_ref)``; the
    remainder shrinks as ``phi**-2``.  Used to verify the expansion order,
    not inside any model path.
    """
    mu = np.asarray(mu, dtype=np.float64)
    if phi <= 0.0:
        raise InvalidInput("precision must be positive")
    lead = simplex.alr(mu, ref)
    J = mu.shape[-1]
    keep = [j for j in range(J) if j != ref]
    inv = 1.0 / mu
    return lead - (inv[..., keep] - inv[..., ref:ref + 1]) / (2.0 * phi)

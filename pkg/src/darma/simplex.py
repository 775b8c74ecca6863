"""Simplex geometry: compositions, probability flooring, and the additive
log-ratio transform with its softmax inverse.

A composition is a plain float array of J strictly positive parts summing to
one; its log-ratio image drops the reference component (0-based index) and
keeps the remaining coordinates in ascending component order.  All functions
accept a single composition or a (T, J) stack of rows.
"""
from __future__ import annotations

import numpy as np

from .errors import InvalidInput

#: probability floor applied before closing raw shares
EPS_PROB = 1e-10

#: tolerance for the sum-to-one invariant
CLOSURE_ATOL = 1e-12


def validate_composition(y, atol=CLOSURE_ATOL):
    """Raise :class:`InvalidInput` unless ``y`` is a valid composition."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim not in (1, 2) or y.shape[-1] < 2:
        raise InvalidInput("composition needs at least two parts")
    if not np.all(np.isfinite(y)):
        raise InvalidInput("composition has non-finite parts")
    if not np.all(y > 0.0):
        raise InvalidInput("composition parts must be strictly positive")
    if not np.allclose(y.sum(axis=-1), 1.0, rtol=0.0, atol=atol):
        raise InvalidInput("composition parts must sum to one")
    return y


def floor_and_close(raw, eps_prob=EPS_PROB):
    """Floor nonnegative parts at ``eps_prob`` and renormalize to sum one.

    Rows already at or above the floor come back as plain renormalizations,
    so closure is scale invariant; a floored row absorbs at most
    ``J * eps_prob`` of injected mass before renormalization.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape[-1] < 2:
        raise InvalidInput("need at least two parts")
    if eps_prob <= 0.0:
        raise InvalidInput("eps_prob must be positive")
    if not np.all(np.isfinite(raw)):
        raise InvalidInput("non-finite input")
    if np.any(raw < 0.0):
        raise InvalidInput("negative parts cannot be floored")
    if np.any(raw.sum(axis=-1) <= 0.0):
        raise InvalidInput("all-zero row cannot be closed")
    floored = np.maximum(raw, eps_prob)
    return floored / floored.sum(axis=-1, keepdims=True)


def alr(y, ref):
    """Additive log-ratio transform against component ``ref`` (0-based)."""
    y = np.asarray(y, dtype=np.float64)
    J = y.shape[-1]
    if not 0 <= ref < J:
        raise InvalidInput(f"reference index {ref} outside 0..{J - 1}")
    if not np.all(y > 0.0):
        raise InvalidInput("log-ratio transform needs strictly positive parts")
    keep = [j for j in range(J) if j != ref]
    return np.log(y[..., keep] / y[..., ref:ref + 1])


def alr_inv(eta, ref):
    """Inverse transform (softmax with a unit slot at ``ref``).

    The exponent is shifted by the row maximum, so the result is finite for
    any finite input; coordinates hundreds of log units below the maximum may
    round to zero in double precision.
    """
    eta = np.asarray(eta, dtype=np.float64)
    if not np.all(np.isfinite(eta)):
        raise InvalidInput("log-ratio coordinates must be finite")
    K = eta.shape[-1]
    if not 0 <= ref <= K:
        raise InvalidInput(f"reference index {ref} outside 0..{K}")
    full = np.zeros(eta.shape[:-1] + (K + 1,))
    full[..., :ref] = eta[..., :ref]
    full[..., ref + 1:] = eta[..., ref:]
    w = np.exp(full - full.max(axis=-1, keepdims=True))
    return w / w.sum(axis=-1, keepdims=True)

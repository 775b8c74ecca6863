"""Gradient-based MCMC: multinomial Hamiltonian sampling with trajectory
doubling, dual-averaged step size, windowed diagonal-mass adaptation,
convergence diagnostics, and the auto-refit policy.

The sampler consumes any ``theta -> (logp, grad)`` target.  Divergences are
transitions whose Hamiltonian error exceeds :data:`DIVERGENCE_THRESHOLD`;
trajectory doubling stops at ``max_treedepth``.  Chains run sequentially,
each on its own seeded stream, so draws are reproducible bit for bit.
"""
from __future__ import annotations

import csv
import json
import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import model
from .errors import InitializationError, InvalidInput, SamplerFailure

#: Hamiltonian error treated as a divergent transition
DIVERGENCE_THRESHOLD = 1000.0

#: refit triggers on the monitored parameters
RHAT_LIMIT = 1.01
ESS_FLOOR = 400.0

#: total fits allowed per origin (first attempt included)
MAX_ATTEMPTS = 3


@dataclass(frozen=True)
class SamplerConfig:
    """Chain layout and adaptation targets."""

    chains: int = 4
    iterations: int = 2000
    warmup: int = 1000
    target_accept: float = 0.90
    max_treedepth: int = 12
    init: str = "zero"
    seed: int = 0

    def __post_init__(self):
        if self.chains < 1:
            raise InvalidInput("need at least one chain")
        if not 0 < self.warmup < self.iterations:
            raise InvalidInput("warmup must lie strictly inside iterations")
        if not 0.5 <= self.target_accept <= 0.999:
            raise InvalidInput("target_accept outside [0.5, 0.999]")
        if self.init not in ("zero", "random"):
            raise InvalidInput("init must be 'zero' or 'random'")


@dataclass
class DiagnosticsReport:
    """Per-fit diagnostics; ``failed`` marks an exhausted refit budget."""

    divergences: int
    treedepth_hits: int
    rhat: np.ndarray
    rhat_rank: np.ndarray
    bulk_ess: np.ndarray
    attempts: int = 1
    failed: bool = False

    @property
    def rhat_max(self):
        return float(np.max(self.rhat))

    @property
    def ess_min(self):
        return float(np.min(self.bulk_ess))

    def to_dict(self):
        return {
            "divergences": int(self.divergences),
            "treedepth_hits": int(self.treedepth_hits),
            "rhat_max": self.rhat_max,
            "ess_min": self.ess_min,
            "attempts": int(self.attempts),
            "failed": bool(self.failed),
            "rhat": [float(v) for v in self.rhat],
            "rhat_rank": [float(v) for v in self.rhat_rank],
            "bulk_ess": [float(v) for v in self.bulk_ess],
        }


@dataclass
class PosteriorDraws:
    """Post-warmup draws, all chains concatenated, plus diagnostics."""

    draws: np.ndarray
    n_chains: int
    diagnostics: DiagnosticsReport
    config: SamplerConfig = None
    names: list = None

    @property
    def per_chain(self):
        S, D = self.draws.shape
        return self.draws.reshape(self.n_chains, S // self.n_chains, D)


def _leapfrog(logp_and_grad, theta, r, grad, eps, inv_mass):
    r_half = r + 0.5 * eps * grad
    theta_new = theta + eps * inv_mass * r_half
    lp, grad_new = logp_and_grad(theta_new)
    r_new = r_half + 0.5 * eps * grad_new
    return theta_new, r_new, grad_new, lp


def _hamiltonian(lp, r, inv_mass):
    return -lp + 0.5 * float(r @ (inv_mass * r))


def find_reasonable_epsilon(logp_and_grad, theta, inv_mass, rng):
    """Double/halve the step until one leapfrog crosses 50% acceptance."""
    lp0, grad0 = logp_and_grad(theta)
    eps = 1.0
    r = rng.standard_normal(theta.size) / np.sqrt(inv_mass)
    h0 = _hamiltonian(lp0, r, inv_mass)
    _, r1, _, lp1 = _leapfrog(logp_and_grad, theta, r, grad0, eps, inv_mass)
    delta = h0 - _hamiltonian(lp1, r1, inv_mass)
    if not np.isfinite(delta):
        delta = -np.inf
    direction = 1.0 if delta > np.log(0.5) else -1.0
    for _ in range(60):
        eps *= 2.0 ** direction
        _, r1, _, lp1 = _leapfrog(logp_and_grad, theta, r, grad0, eps,
                                  inv_mass)
        delta = h0 - _hamiltonian(lp1, r1, inv_mass)
        if not np.isfinite(delta):
            delta = -np.inf
        if direction * delta <= direction * np.log(0.5):
            break
    return min(max(eps, 1e-10), 1e3)


class _Tree:
    __slots__ = ("theta_minus", "r_minus", "grad_minus", "theta_plus",
                 "r_plus", "grad_plus", "proposal", "prop_lp", "prop_grad",
                 "log_weight", "ok", "divergent", "sum_alpha", "n_alpha")


def _build_tree(logp_and_grad, theta, r, grad, direction, depth, eps,
                inv_mass, h0, rng):
    if depth == 0:
        theta1, r1, grad1, lp1 = _leapfrog(logp_and_grad, theta, r, grad,
                                           direction * eps, inv_mass)
        h1 = _hamiltonian(lp1, r1, inv_mass)
        err = h1 - h0
        if not np.isfinite(err):
            err = np.inf
        node = _Tree()
        node.theta_minus = node.theta_plus = node.proposal = theta1
        node.r_minus = node.r_plus = r1
        node.grad_minus = node.grad_plus = node.prop_grad = grad1
        node.prop_lp = lp1
        node.log_weight = -h1 if np.isfinite(h1) else -np.inf
        node.divergent = err > DIVERGENCE_THRESHOLD
        node.ok = not node.divergent
        node.sum_alpha = float(min(1.0, np.exp(min(0.0, -err))))
        node.n_alpha = 1
        return node

    first = _build_tree(logp_and_grad, theta, r, grad, direction, depth - 1,
                        eps, inv_mass, h0, rng)
    if not first.ok:
        return first
    if direction == 1:
        second = _build_tree(logp_and_grad, first.theta_plus, first.r_plus,
                             first.grad_plus, direction, depth - 1, eps,
                             inv_mass, h0, rng)
        first.theta_plus = second.theta_plus
        first.r_plus = second.r_plus
        first.grad_plus = second.grad_plus
    else:
        second = _build_tree(logp_and_grad, first.theta_minus, first.r_minus,
                             first.grad_minus, direction, depth - 1, eps,
                             inv_mass, h0, rng)
        first.theta_minus = second.theta_minus
        first.r_minus = second.r_minus
        first.grad_minus = second.grad_minus

    total = np.logaddexp(first.log_weight, second.log_weight)
    if second.ok and np.isfinite(second.log_weight) \
            and np.log(rng.random()) < second.log_weight - total:
        first.proposal = second.proposal
        first.prop_lp = second.prop_lp
        first.prop_grad = second.prop_grad
    first.log_weight = total
    first.divergent = first.divergent or second.divergent
    first.sum_alpha += second.sum_alpha
    first.n_alpha += second.n_alpha
    span = first.theta_plus - first.theta_minus
    no_uturn = (span @ (inv_mass * first.r_minus) >= 0.0
                and span @ (inv_mass * first.r_plus) >= 0.0)
    first.ok = second.ok and not first.divergent and no_uturn
    return first


def _nuts_transition(logp_and_grad, theta, lp, grad, eps, inv_mass,
                     max_treedepth, rng):
    """One trajectory; returns the new state plus transition statistics."""
    r0 = rng.standard_normal(theta.size) / np.sqrt(inv_mass)
    h0 = _hamiltonian(lp, r0, inv_mass)

    tree = _Tree()
    tree.theta_minus = tree.theta_plus = theta
    tree.r_minus = tree.r_plus = r0
    tree.grad_minus = tree.grad_plus = grad
    tree.proposal, tree.prop_lp, tree.prop_grad = theta, lp, grad
    tree.log_weight = -h0
    tree.sum_alpha, tree.n_alpha = 0.0, 0
    divergent = False
    depth = 0
    while depth < max_treedepth:
        direction = 1 if rng.random() < 0.5 else -1
        if direction == 1:
            sub = _build_tree(logp_and_grad, tree.theta_plus, tree.r_plus,
                              tree.grad_plus, 1, depth, eps, inv_mass, h0,
                              rng)
        else:
            sub = _build_tree(logp_and_grad, tree.theta_minus, tree.r_minus,
                              tree.grad_minus, -1, depth, eps, inv_mass, h0,
                              rng)
        tree.sum_alpha += sub.sum_alpha
        tree.n_alpha += sub.n_alpha
        divergent = divergent or sub.divergent
        if not sub.ok:
            break
        # biased progressive sampling favors the fresh subtree
        if np.log(rng.random()) < sub.log_weight - tree.log_weight:
            tree.proposal = sub.proposal
            tree.prop_lp = sub.prop_lp
            tree.prop_grad = sub.prop_grad
        tree.log_weight = np.logaddexp(tree.log_weight, sub.log_weight)
        if direction == 1:
            tree.theta_plus, tree.r_plus = sub.theta_plus, sub.r_plus
            tree.grad_plus = sub.grad_plus
        else:
            tree.theta_minus, tree.r_minus = sub.theta_minus, sub.r_minus
            tree.grad_minus = sub.grad_minus
        span = tree.theta_plus - tree.theta_minus
        if (span @ (inv_mass * tree.r_minus) < 0.0
                or span @ (inv_mass * tree.r_plus) < 0.0):
            depth += 1
            break
        depth += 1
    accept_stat = tree.sum_alpha / max(tree.n_alpha, 1)
    return (tree.proposal, tree.prop_lp, tree.prop_grad, accept_stat,
            divergent, depth >= max_treedepth)


@dataclass
class _DualAveraging:
    """Nesterov dual averaging of the log step size."""

    target: float
    mu: float
    gamma: float = 0.05
    t0: float = 10.0
    kappa: float = 0.75
    count: int = 0
    h_bar: float = 0.0
    log_eps_bar: float = 0.0

    def update(self, accept_stat):
        self.count += 1
        w = 1.0 / (self.count + self.t0)
        self.h_bar = (1 - w) * self.h_bar + w * (self.target - accept_stat)
        log_eps = self.mu - np.sqrt(self.count) / self.gamma * self.h_bar
        log_eps = min(max(log_eps, np.log(1e-10)), np.log(1e3))
        w2 = self.count ** -self.kappa
        self.log_eps_bar = (1 - w2) * self.log_eps_bar + w2 * log_eps
        return float(np.exp(log_eps))

    @property
    def adapted(self):
        return float(np.exp(self.log_eps_bar))


def _mass_windows(warmup):
    """(start, end) spans of the expanding mass windows inside warmup.

    Layout: 15% step-size-only buffer, then expanding windows (25, 50, 100,
    ...) covering the middle 75%, then a 10% step-size-only tail.
    """
    init_end = int(0.15 * warmup)
    term_start = warmup - max(int(0.10 * warmup), 1)
    windows = []
    start, size = init_end, 25
    while start < term_start:
        end = min(start + size, term_start)
        if term_start - end < 25:
            end = term_start
        windows.append((start, end))
        start, size = end, size * 2
    return windows


def sample_chain(logp_and_grad, theta0, config, chain_id):
    """Run one chain; returns draws plus chain-level statistics."""
    rng = np.random.default_rng([config.seed, chain_id])
    theta = np.asarray(theta0, dtype=np.float64).copy()
    lp, grad = logp_and_grad(theta)
    if not np.isfinite(lp):
        raise InitializationError(
            f"log posterior not finite at the chain {chain_id} start")
    dim = theta.size
    inv_mass = np.ones(dim)
    eps = find_reasonable_epsilon(logp_and_grad, theta, inv_mass, rng)
    da = _DualAveraging(target=config.target_accept, mu=np.log(10 * eps))

    warmup, total = config.warmup, config.iterations
    windows = _mass_windows(warmup)
    keep = np.empty((total - warmup, dim))
    window_buf = []
    divergences = 0
    treedepth_hits = 0
    warmup_divergences = 0

    for it in range(total):
        theta, lp, grad, accept_stat, divergent, hit = _nuts_transition(
            logp_and_grad, theta, lp, grad, eps, inv_mass,
            config.max_treedepth, rng)
        if it < warmup:
            eps = da.update(accept_stat)
            if divergent:
                warmup_divergences += 1
            for (ws, we) in windows:
                if ws <= it < we:
                    window_buf.append(theta.copy())
                    if it == we - 1:
                        draws = np.asarray(window_buf)
                        n = draws.shape[0]
                        if n >= 2:
                            var = draws.var(axis=0, ddof=1)
                            inv_mass = (n / (n + 5.0)) * var \
                                + 1e-3 * (5.0 / (n + 5.0))
                            inv_mass = np.maximum(inv_mass, 1e-12)
                        window_buf = []
                        eps = find_reasonable_epsilon(logp_and_grad, theta,
                                                      inv_mass, rng)
                        da = _DualAveraging(target=config.target_accept,
                                            mu=np.log(10 * eps))
                    break
            if it == warmup - 1:
                eps = da.adapted
        else:
            keep[it - warmup] = theta
            if divergent:
                divergences += 1
            if hit:
                treedepth_hits += 1

    if warmup_divergences >= warmup:
        raise SamplerFailure(
            f"chain {chain_id}: every warmup transition diverged")
    return keep, divergences, treedepth_hits


def sample_nuts(logp_and_grad, dim, config, init_point=None):
    """Sample ``config.chains`` chains from an arbitrary target.

    Returns ``(draws, per_chain_draws, divergences, treedepth_hits)`` with
    post-warmup draws concatenated chain by chain.
    """
    chains = []
    divergences = 0
    treedepth_hits = 0
    for c in range(config.chains):
        if init_point is not None:
            theta0 = np.asarray(init_point, dtype=np.float64)
        elif config.init == "zero":
            theta0 = np.zeros(dim)
        else:
            theta0 = np.random.default_rng(
                [config.seed, c, 991]).uniform(-2.0, 2.0, dim)
        keep, div, hits = sample_chain(logp_and_grad, theta0, config, c)
        chains.append(keep)
        divergences += div
        treedepth_hits += hits
    per_chain = np.asarray(chains)
    draws = per_chain.reshape(-1, dim)
    return draws, per_chain, divergences, treedepth_hits


def _split_chains(per_chain):
    C, n, D = per_chain.shape
    half = n // 2
    if half < 1:
        return per_chain
    return per_chain[:, :2 * half].reshape(C * 2, half, D)


def compute_rhat(per_chain):
    """Plain split potential-scale-reduction factor per parameter.

    Constant chains (zero within-chain variance) come back as ``inf``.
    """
    per_chain = np.asarray(per_chain, dtype=np.float64)
    if per_chain.ndim == 2:
        per_chain = per_chain[:, :, None]
    if per_chain.shape[0] < 2 or per_chain.shape[1] < 4:
        raise InvalidInput("need at least 2 chains of 4 draws")
    split = _split_chains(per_chain)
    n = split.shape[1]
    means = split.mean(axis=1)
    variances = split.var(axis=1, ddof=1)
    W = variances.mean(axis=0)
    B = n * means.var(axis=0, ddof=1)
    var_plus = (n - 1) / n * W + B / n
    out = np.full(W.shape, np.inf)
    ok = W > 0.0
    out[ok] = np.sqrt(var_plus[ok] / W[ok])
    return out


def _rank_normalize(per_chain):
    C, n, D = per_chain.shape
    flat = per_chain.reshape(C * n, D)
    z = np.empty_like(flat)
    inv_cdf = statistics.NormalDist().inv_cdf
    N = C * n
    for d in range(D):
        order = np.argsort(flat[:, d], kind="stable")
        ranks = np.empty(N)
        ranks[order] = np.arange(1, N + 1)
        z[:, d] = [inv_cdf((r - 0.375) / (N + 0.25)) for r in ranks]
    return z.reshape(C, n, D)


def compute_rank_normalized_rhat(per_chain):
    """Split R-hat on rank-normalized draws (reported, not a refit trigger)."""
    per_chain = np.asarray(per_chain, dtype=np.float64)
    if per_chain.ndim == 2:
        per_chain = per_chain[:, :, None]
    degenerate = np.array([np.ptp(per_chain[:, :, d]) == 0.0
                           for d in range(per_chain.shape[2])])
    out = compute_rhat(np.where(
        degenerate[None, None, :], per_chain, _rank_normalize(per_chain)))
    out[degenerate] = np.inf
    return out


def _chain_autocov(x):
    """Biased autocovariances of one chain via FFT."""
    n = x.shape[0]
    xc = x - x.mean()
    size = 1
    while size < 2 * n:
        size *= 2
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conjugate(f), size)[:n].real
    return acov / n


def compute_bulk_ess(per_chain):
    """Rank-normalized bulk effective sample size per parameter.

    Autocorrelations combine across split chains and truncate at the first
    nonpositive Geyer pair sum (with the monotone adjustment); the result is
    capped at the total draw count.  Degenerate chains report 0.
    """
    per_chain = np.asarray(per_chain, dtype=np.float64)
    if per_chain.ndim == 2:
        per_chain = per_chain[:, :, None]
    if per_chain.shape[0] < 2 or per_chain.shape[1] < 4:
        raise InvalidInput("need at least 2 chains of 4 draws")
    S_total = per_chain.shape[0] * per_chain.shape[1]
    D = per_chain.shape[2]
    out = np.empty(D)
    for d in range(D):
        col = per_chain[:, :, d]
        if np.ptp(col) == 0.0:
            out[d] = 0.0
            continue
        z = _rank_normalize(col[:, :, None])[:, :, 0]
        split = _split_chains(z[:, :, None])[:, :, 0]
        m, n = split.shape
        acov = np.asarray([_chain_autocov(split[c]) for c in range(m)])
        chain_var = split.var(axis=1, ddof=1)
        W = chain_var.mean()
        B = n * split.mean(axis=1).var(ddof=1) if m > 1 else 0.0
        var_plus = (n - 1) / n * W + B / n
        if var_plus <= 0.0:
            out[d] = 0.0
            continue
        rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
        tau = 0.0
        prev = np.inf
        k = 0
        max_pairs = (n - 2) // 2
        while k <= max_pairs:
            pair = rho[2 * k] + rho[2 * k + 1]
            if pair <= 0.0:
                break
            pair = min(pair, prev)
            tau += pair
            prev = pair
            k += 1
        tau = max(2.0 * tau - 1.0, 1.0 / np.log10(max(S_total, 10)))
        out[d] = min(S_total / tau, float(S_total))
    return out


def _diagnose(per_chain, divergences, treedepth_hits, attempts=1,
              failed=False):
    return DiagnosticsReport(
        divergences=divergences,
        treedepth_hits=treedepth_hits,
        rhat=compute_rhat(per_chain),
        rhat_rank=compute_rank_normalized_rhat(per_chain),
        bulk_ess=compute_bulk_ess(per_chain),
        attempts=attempts,
        failed=failed,
    )


def sample_posterior(spec, panel, config, priors=model.DEFAULT_PRIORS):
    """Fit the model once with the given sampler configuration."""
    logpost = model.make_logpost_fn(spec, panel, priors)
    draws, per_chain, div, hits = sample_nuts(logpost, spec.dim, config)
    return PosteriorDraws(draws, config.chains,
                          _diagnose(per_chain, div, hits), config,
                          model.param_names(spec))


def needs_refit(diag, rhat_limit=RHAT_LIMIT, ess_floor=ESS_FLOOR):
    return (diag.divergences > 0 or diag.rhat_max > rhat_limit
            or diag.ess_min < ess_floor)


def fit_with_refit(spec, panel, config, priors=model.DEFAULT_PRIORS,
                   max_attempts=MAX_ATTEMPTS, rhat_limit=RHAT_LIMIT,
                   ess_floor=ESS_FLOOR, sampler=None):
    """Fit, refitting on bad diagnostics with a doubled budget.

    Each refit doubles iterations and warmup and raises ``target_accept`` by
    0.01 (capped at 0.999).  After ``max_attempts`` fits the best attempt
    (fewest divergences, then largest minimum ESS) is returned with
    ``failed`` set.
    """
    sampler = sampler or sample_posterior
    attempt_cfg = config
    best = None
    for attempt in range(1, max_attempts + 1):
        fit = sampler(spec, panel, attempt_cfg, priors)
        fit.diagnostics.attempts = attempt
        fit.config = attempt_cfg
        if not needs_refit(fit.diagnostics, rhat_limit, ess_floor):
            return fit
        key = (fit.diagnostics.divergences, -fit.diagnostics.ess_min)
        if best is None or key < best[0]:
            best = (key, fit)
        attempt_cfg = replace(
            attempt_cfg,
            iterations=attempt_cfg.iterations * 2,
            warmup=attempt_cfg.warmup * 2,
            target_accept=min(attempt_cfg.target_accept + 0.01, 0.999),
        )
    fit = best[1]
    fit.diagnostics.attempts = max_attempts
    fit.diagnostics.failed = True
    return fit


def save_draws(fit, csv_path, json_path=None):
    """Write draws as columnar CSV plus the diagnostics JSON sidecar."""
    csv_path = Path(csv_path)
    names = fit.names or [f"theta.{i + 1}" for i in
                          range(fit.draws.shape[1])]
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["chain"] + names)
        S = fit.draws.shape[0]
        per = S // fit.n_chains
        for s in range(S):
            writer.writerow([s // per + 1]
                            + [repr(float(v)) for v in fit.draws[s]])
    json_path = Path(json_path) if json_path \
        else csv_path.with_suffix(".diagnostics.json")
    with open(json_path, "w") as fh:
        json.dump(fit.diagnostics.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return csv_path, json_path


def load_draws(csv_path):
    """Read a draws CSV back into ``(draws, names, n_chains)``."""
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    names = header[1:]
    draws = np.asarray([[float(v) for v in row[1:]] for row in rows])
    n_chains = len({row[0] for row in rows}) if rows else 0
    return draws, names, n_chains

"""Forecasting and probabilistic scoring.

Mean paths follow the conditional-expectation recursion: realized shocks
stay in the moving-average sum, future centered shocks integrate out to
zero, and future raw residuals contribute their nonzero conditional mean
(exact one step ahead, Monte Carlo beyond).  Scoring covers log predictive
density via the mixture-of-parameters form, central-interval coverage, and
composition-wide RMSE/MAE.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels, dirichlet, model, simplex
from .errors import InvalidInput


def _variant_eps(spec, path):
    """Innovations of the requested variant recomputed from a filtered path.

    The stored ``path.eps`` already matches the filtering variant; this
    rebuilds either definition so a shared state can feed both forecast
    rules.  Burn-in rows stay pinned at zero.
    """
    m0 = spec.burn_in
    if spec.variant == model.CENTERED:
        alpha = np.maximum(path.phi[:, None] * path.mu, dirichlet.EPS_SHAPE)
        psi = _kernels.digamma(alpha)
        keep = [j for j in range(spec.J) if j != spec.ref_index]
        g = psi[:, keep] - psi[:, spec.ref_index:spec.ref_index + 1]
        eps = path.alr_y - g
    else:
        eps = path.alr_y - path.eta
    eps = eps.copy()
    eps[:m0] = 0.0
    return eps


def _bias_path_mc(spec, params, path, panel, h_max, X_future, Z_future,
                  rng, n_paths):
    """Monte Carlo conditional means of the raw-residual bias b_t.

    Simulates ``n_paths`` forward trajectories under the raw recursion and
    averages ``g(mu, phi) - eta`` at each horizon; needed only for raw
    forecasts more than two steps out.
    """
    T, K, J, ref = panel.T, spec.K, spec.J, spec.ref_index
    m = panel.X @ params.beta.T
    m_fut = X_future @ params.beta.T
    phi_fut = np.exp(Z_future @ params.gamma)
    eps_raw = _variant_eps(model.DarmaSpec(spec.P, spec.Q, spec.J, ref,
                                           model.RAW, spec.M, spec.R_phi),
                           path)
    sim_a, sim_eps = {}, {}
    keep = [j for j in range(J) if j != ref]
    bhat = np.zeros((h_max, K))
    for h in range(1, h_max):
        s = T - 1 + h
        eta = np.broadcast_to(m_fut[h - 1], (n_paths, K)).copy()
        for p in range(1, spec.P + 1):
            idx = s - p
            a_lag = sim_a[idx] if idx >= T else \
                np.broadcast_to(path.alr_y[idx], (n_paths, K))
            m_lag = m_fut[idx - T] if idx >= T else m[idx]
            eta += (a_lag - m_lag) @ params.A[p - 1].T
        for q in range(1, spec.Q + 1):
            idx = s - q
            e_lag = sim_eps[idx] if idx >= T else \
                np.broadcast_to(eps_raw[idx], (n_paths, K))
            eta += e_lag @ params.B[q - 1].T
        mu = simplex.alr_inv(eta, ref)
        phi = phi_fut[h - 1]
        alpha = np.maximum(phi * mu, dirichlet.EPS_SHAPE)
        psi = _kernels.digamma(alpha)
        g = psi[:, keep] - psi[:, ref:ref + 1]
        bhat[h - 1] = (g - eta).mean(axis=0)
        gdraw = dirichlet._sample_gamma(rng, alpha)
        y = simplex.floor_and_close(gdraw / gdraw.sum(axis=1, keepdims=True))
        a = simplex.alr(y, ref)
        sim_a[s] = a
        sim_eps[s] = a - eta
    return bhat


def forecast_mean_path(spec, params, path, panel, h_max, X_future, Z_future,
                       rng_seed=0, n_bias_paths=2000):
    """Conditional-mean forecast of the predictor and composition.

    Parameters
    ----------
    path : StatePath filtered through the end of ``panel``
    h_max : forecast horizon
    X_future, Z_future : (h_max, M) and (h_max, R) future designs

    Returns
    -------
    eta_hat : (h_max, K) conditional means of the predictor
    mu_hat : (h_max, J) their inverse transforms

    The moving-average sum keeps only realized shocks, so it empties once
    the horizon passes Q.  Autoregressive terms propagate through the
    plug-in conditional mean of the transformed observation.  Raw-variant
    bias terms beyond one step are Monte Carlo averages over
    ``n_bias_paths`` forward simulations seeded by ``rng_seed``.
    """
    X_future = np.asarray(X_future, dtype=np.float64)
    Z_future = np.asarray(Z_future, dtype=np.float64)
    if X_future.shape != (h_max, spec.M) or Z_future.shape != (h_max,
                                                               spec.R_phi):
        raise InvalidInput("future covariates must cover 1..h_max")
    T, K, ref = panel.T, spec.K, spec.ref_index
    m0 = spec.burn_in
    raw = spec.variant == model.RAW

    m_hist = panel.X @ params.beta.T
    m_fut = X_future @ params.beta.T
    phi_fut = np.exp(Z_future @ params.gamma)
    eps_hist = _variant_eps(spec, path)

    need_mc = raw and spec.Q > 0 and h_max >= 3
    bias_mc = _bias_path_mc(spec, params, path, panel, h_max, X_future,
                            Z_future, np.random.default_rng(rng_seed),
                            n_bias_paths) if need_mc else None

    a_hat = {s: path.alr_y[s] for s in range(max(0, T - spec.P - 1), T)}
    e_hat = {s: (eps_hist[s] if s >= m0 else np.zeros(K))
             for s in range(max(0, T - spec.Q - 1), T)}
    eta_hat = np.empty((h_max, K))
    mu_hat = np.empty((h_max, spec.J))
    for h in range(1, h_max + 1):
        s = T - 1 + h
        eta = m_fut[h - 1].copy()
        for p in range(1, spec.P + 1):
            idx = s - p
            m_lag = m_fut[idx - T] if idx >= T else m_hist[idx]
            eta += params.A[p - 1] @ (a_hat[idx] - m_lag)
        for q in range(1, spec.Q + 1):
            eta += params.B[q - 1] @ e_hat[s - q]
        eta_hat[h - 1] = eta
        mu = simplex.alr_inv(eta, ref)
        mu_hat[h - 1] = mu
        phi = float(phi_fut[h - 1])
        g = dirichlet.alr_mean(np.maximum(mu, 1e-300), phi, ref)
        a_hat[s] = g
        if raw:
            # one step out the bias is known exactly; later steps are MC
            e_hat[s] = g - eta if h == 1 else bias_mc[h - 1]
        else:
            e_hat[s] = np.zeros(K)
    return eta_hat, mu_hat


def _predictive_paths(spec, params, panel, origin, h, rng):
    """One sampled forward trajectory; returns draws and their shapes."""
    sub = panel.slice(0, origin)
    path = model.filter(spec, params, sub)
    T, K, J, ref = origin, spec.K, spec.J, spec.ref_index
    centered = spec.variant == model.CENTERED
    m_hist = sub.X @ params.beta.T
    m_fut = panel.X[origin:origin + h] @ params.beta.T
    phi_fut = np.exp(panel.Z[origin:origin + h] @ params.gamma)
    eps_hist = _variant_eps(spec, path)
    a_hist = {s: path.alr_y[s] for s in range(max(0, T - spec.P - 1), T)}
    e_hist = {s: eps_hist[s] for s in range(max(0, T - spec.Q - 1), T)}

    y_out = np.empty((h, J))
    alpha_out = np.empty((h, J))
    for step in range(1, h + 1):
        s = T - 1 + step
        eta = m_fut[step - 1].copy()
        for p in range(1, spec.P + 1):
            idx = s - p
            m_lag = m_fut[idx - T] if idx >= T else m_hist[idx]
            eta += params.A[p - 1] @ (a_hist[idx] - m_lag)
        for q in range(1, spec.Q + 1):
            eta += params.B[q - 1] @ e_hist[s - q]
        mu = simplex.alr_inv(eta, ref)
        phi = float(phi_fut[step - 1])
        alpha = np.maximum(phi * mu, dirichlet.EPS_SHAPE)
        y = dirichlet.sample(alpha, 1, rng)[0]
        y_out[step - 1] = y
        alpha_out[step - 1] = alpha
        a_hist[s] = simplex.alr(y, ref)
        if centered:
            e_hist[s] = a_hist[s] - dirichlet.alr_mean(mu, phi, ref)
        else:
            e_hist[s] = a_hist[s] - eta
    return y_out, alpha_out


def subsample_indices(total, S, rng_seed):
    """Uniform draw subsample without replacement, sorted for determinism."""
    if S > total:
        raise InvalidInput(f"requested {S} draws but only {total} available")
    rng = np.random.default_rng([rng_seed, 1])
    return np.sort(rng.choice(total, size=S, replace=False))


def predictive_draws(spec, draws, panel, origin, h, S, rng_seed):
    """Propagate ``S`` posterior draws through the recursion and sample.

    ``draws`` is a PosteriorDraws or a flat (n, dim) matrix; ``origin`` is
    the number of observed rows conditioned on.  Future covariates are read
    from panel rows ``origin .. origin+h-1``.  Returns
    ``(y_draws, alphas)`` of shapes (S, h, J).
    """
    mat = draws.draws if hasattr(draws, "draws") else np.asarray(draws)
    if origin + h > panel.T:
        raise InvalidInput("panel does not cover the forecast horizon")
    idx = subsample_indices(mat.shape[0], S, rng_seed)
    rng = np.random.default_rng([rng_seed, 2])
    y = np.empty((S, h, spec.J))
    alphas = np.empty((S, h, spec.J))
    for i, s in enumerate(idx):
        params = model.DarmaParams.unflatten(spec, mat[s])
        y[i], alphas[i] = _predictive_paths(spec, params, panel, origin, h,
                                            rng)
    return y, alphas


def lpd(y_true, mu, phi, eps_shape=dirichlet.EPS_SHAPE):
    """Mixture-of-parameters log predictive density.

    ``log[(1/S) sum_s Dir(y | phi_s mu_s)]`` computed by max-shifted
    log-mean-exp over the per-draw Dirichlet log densities.
    """
    y_true = simplex.validate_composition(y_true)
    mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
    phi = np.atleast_1d(np.asarray(phi, dtype=np.float64))
    alpha = np.maximum(phi[:, None] * mu, eps_shape)
    return lpd_from_alpha(y_true, alpha)


def lpd_from_alpha(y_true, alpha):
    lls = _kernels.dirichlet_logpdf(np.log(y_true),
                                    np.ascontiguousarray(alpha))
    hi = lls.max()
    return float(hi + np.log(np.mean(np.exp(lls - hi))))


def coverage_95(y_true, draws, level=0.95):
    """Componentwise membership of the central predictive interval.

    Quantiles interpolate linearly between order statistics; at least 40
    draws are required for stable tail estimates.
    """
    draws = np.asarray(draws, dtype=np.float64)
    if draws.shape[0] < 40:
        raise InvalidInput("need at least 40 draws for interval coverage")
    tail = (1.0 - level) / 2.0
    lo = np.quantile(draws, tail, axis=0)
    hi = np.quantile(draws, 1.0 - tail, axis=0)
    y_true = np.asarray(y_true, dtype=np.float64)
    return (y_true >= lo) & (y_true <= hi)


def central_interval(draws, level=0.95):
    tail = (1.0 - level) / 2.0
    return (np.quantile(draws, tail, axis=0),
            np.quantile(draws, 1.0 - tail, axis=0))


def point_errors(mu_hat, y_true):
    """RMSE and MAE pooled over every (time, component) cell."""
    mu_hat = np.atleast_2d(np.asarray(mu_hat, dtype=np.float64))
    y_true = np.atleast_2d(np.asarray(y_true, dtype=np.float64))
    if mu_hat.shape != y_true.shape:
        raise InvalidInput("forecast and truth shapes differ")
    diff = mu_hat - y_true
    return (float(np.sqrt(np.mean(diff * diff))),
            float(np.mean(np.abs(diff))))


@dataclass
class ForecastResult:
    """Per-horizon predictive summary from posterior draws."""

    horizon: int
    eta_mean: np.ndarray
    mu_mean: np.ndarray
    draws: np.ndarray
    interval_lo: np.ndarray
    interval_hi: np.ndarray
    lpd: np.ndarray = None

    def to_json_dict(self):
        out = {
            "horizon": int(self.horizon),
            "eta_mean": self.eta_mean.tolist(),
            "mu_mean": self.mu_mean.tolist(),
            "interval_lo": self.interval_lo.tolist(),
            "interval_hi": self.interval_hi.tolist(),
        }
        if self.lpd is not None:
            out["lpd"] = [float(v) for v in self.lpd]
        return out


@dataclass
class ScorePanel:
    """Scores over an evaluation window for one model."""

    elpd_sum: float
    lpd_t: list
    coverage: float
    rmse: float
    mae: float

    def to_dict(self):
        return {"elpd_sum": float(self.elpd_sum),
                "lpd_t": [float(v) for v in self.lpd_t],
                "coverage": float(self.coverage),
                "rmse": float(self.rmse), "mae": float(self.mae)}


def forecast(spec, fit, panel, origin, h, S, rng_seed, y_true=None,
             n_bias_paths=2000, level=0.95):
    """Full predictive summary at one origin.

    The point path averages per-draw conditional-mean forecasts; intervals
    and (when truth rows are supplied) per-horizon mixture log scores come
    from the sampled predictive trajectories.
    """
    mat = fit.draws if hasattr(fit, "draws") else np.asarray(fit)
    idx = subsample_indices(mat.shape[0], S, rng_seed)
    y_draws, alphas = predictive_draws(spec, mat, panel, origin, h, S,
                                       rng_seed)
    eta_acc = np.zeros((h, spec.K))
    mu_acc = np.zeros((h, spec.J))
    X_fut = panel.X[origin:origin + h]
    Z_fut = panel.Z[origin:origin + h]
    sub = panel.slice(0, origin)
    for i, s in enumerate(idx):
        params = model.DarmaParams.unflatten(spec, mat[s])
        path = model.filter(spec, params, sub)
        eta_hat, mu_hat = forecast_mean_path(
            spec, params, path, sub, h, X_fut, Z_fut,
            rng_seed=[rng_seed, 3, int(s)], n_bias_paths=n_bias_paths)
        eta_acc += eta_hat
        mu_acc += mu_hat
    lo, hi = central_interval(y_draws, level)
    lpd_h = None
    if y_true is not None:
        y_true = np.atleast_2d(y_true)
        lpd_h = np.array([lpd_from_alpha(y_true[k], alphas[:, k, :])
                          for k in range(h)])
    return ForecastResult(h, eta_acc / S, mu_acc / S, y_draws, lo, hi, lpd_h)


def save_forecast_csv(result, path):
    """One row per (horizon, component): mean and central interval."""
    path = Path(path)
    J = result.mu_mean.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["h", "component", "mu_mean", "lo", "hi"])
        for k in range(result.horizon):
            for j in range(J):
                writer.writerow([k + 1, j + 1,
                                 repr(float(result.mu_mean[k, j])),
                                 repr(float(result.interval_lo[k, j])),
                                 repr(float(result.interval_hi[k, j]))])
    return path


def save_scores_json(scores, path):
    """Score panels keyed by model name, as a JSON summary."""
    path = Path(path)
    payload = {name: sp.to_dict() for name, sp in scores.items()}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path

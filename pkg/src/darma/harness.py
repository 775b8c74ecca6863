"""Evaluation harness: fixed one-step holdout and rolling one-step origins.

Both designs fit the raw and centered variants under identical covariates,
priors, seeds, and sampler settings, score one-step-ahead forecasts with the
mixture log density, interval coverage, and composition RMSE/MAE, and write
plot-ready CSV/JSON/markdown reports.  Per-origin seeds are ``base + index``
so origins are independently reproducible and may run in parallel.
"""
from __future__ import annotations

import csv
import datetime
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import dirichlet, forecast, ingest, model, simplex
from .errors import DarmaError, InvalidInput
from .inference import SamplerConfig, fit_with_refit

VARIANTS = (model.CENTERED, model.RAW)


@dataclass(frozen=True)
class EvalConfig:
    """Design, window rules, and sampler settings for one evaluation run."""

    design: str = "fixed"
    min_train: int = 104
    sampler_full: SamplerConfig = field(
        default_factory=lambda: SamplerConfig())
    sampler_light: SamplerConfig = field(
        default_factory=lambda: SamplerConfig(chains=2, iterations=1200,
                                              warmup=600, target_accept=0.95))
    score_draws: int = None
    seed: int = 0
    jobs: int = 1
    # refit triggers; defaults follow the reference policy
    rhat_limit: float = 1.01
    ess_floor: float = 400.0

    def __post_init__(self):
        if self.design not in ("fixed", "rolling"):
            raise InvalidInput("design must be 'fixed' or 'rolling'")

    def resolved_score_draws(self):
        if self.score_draws is not None:
            return self.score_draws
        return 400 if self.design == "fixed" else 200

    def to_dict(self):
        out = asdict(self)
        out["score_draws"] = self.resolved_score_draws()
        return out


@dataclass
class FitRecord:
    """One sampler run inside a design (origin -1 marks the fixed fit)."""

    variant: str
    origin: int
    divergences: int
    treedepth_hits: int
    rhat_max: float
    ess_min: float
    attempts: int
    failed: bool


@dataclass
class OriginRow:
    """Scores of one rolling origin for both variants."""

    index: int
    t0: int
    date: str
    lpd: dict
    rmse: dict
    mae: dict
    covered: dict
    divergences: dict
    attempts: dict
    failed: dict
    skipped: bool = False
    note: str = ""

    @property
    def lpd_diff(self):
        return self.lpd[model.CENTERED] - self.lpd[model.RAW]


@dataclass
class EvalReport:
    """Everything a design run produced, ready for :func:`emit_report`."""

    design: str
    config: dict
    scores: dict
    fit_records: list
    origin_rows: list = field(default_factory=list)
    cum_elpd_diff: list = field(default_factory=list)
    wins: int = 0
    losses: int = 0
    ties: int = 0
    t_train: int = None
    t_test: int = None
    diagnostics_totals: dict = field(default_factory=dict)


def check_variant_pair(spec_pair):
    """Both specs must agree on everything except the innovation."""
    raw, cen = spec_pair[model.RAW], spec_pair[model.CENTERED]
    if raw.variant != model.RAW or cen.variant != model.CENTERED:
        raise InvalidInput("variant pair mislabeled")
    if replace(raw, variant=model.CENTERED) != cen:
        raise InvalidInput("variant pair differs beyond the innovation")


def _replicate_compositions(alphas, rng):
    g = dirichlet._sample_gamma(rng, alphas)
    return simplex.floor_and_close(g / g.sum(axis=-1, keepdims=True))


def _one_step_parameters(spec, draws, panel, origin, S, seed):
    """Per-draw one-step (mu, alpha) at row ``origin`` given rows before it."""
    idx = forecast.subsample_indices(draws.shape[0], S, seed)
    S_eff = idx.shape[0]
    mus = np.empty((S_eff, spec.J))
    alphas = np.empty((S_eff, spec.J))
    for i, s in enumerate(idx):
        params = model.DarmaParams.unflatten(spec, draws[s])
        path = model.filter(spec, params, panel.slice(0, origin + 1))
        mus[i] = path.mu[origin]
        alphas[i] = np.maximum(path.phi[origin] * path.mu[origin],
                               dirichlet.EPS_SHAPE)
    return mus, alphas


def _score_window(spec, draws, panel, t_train, S, seed):
    """Sequential one-step scores over rows ``t_train .. T-1``.

    The filter is causal, so one pass per draw over the full panel yields
    every one-step-ahead (mu, phi); the observed history between test weeks
    re-enters the state exactly as in a week-by-week refilter.
    """
    idx = forecast.subsample_indices(draws.shape[0], S, seed)
    S_eff = idx.shape[0]
    W = panel.T - t_train
    mus = np.empty((S_eff, W, spec.J))
    alphas = np.empty((S_eff, W, spec.J))
    for i, s in enumerate(idx):
        params = model.DarmaParams.unflatten(spec, draws[s])
        path = model.filter(spec, params, panel)
        mu = path.mu[t_train:]
        mus[i] = mu
        alphas[i] = np.maximum(path.phi[t_train:, None] * mu,
                               dirichlet.EPS_SHAPE)
    rng = np.random.default_rng([seed, 4])
    reps = _replicate_compositions(alphas, rng)
    truth = panel.Y[t_train:]
    lpd_t = [forecast.lpd_from_alpha(truth[w], alphas[:, w, :])
             for w in range(W)]
    covered = np.empty((W, spec.J), dtype=bool)
    for w in range(W):
        covered[w] = forecast.coverage_95(truth[w], reps[:, w, :])
    mu_point = mus.mean(axis=0)
    rmse, mae = forecast.point_errors(mu_point, truth)
    return forecast.ScorePanel(math.fsum(lpd_t), lpd_t,
                               float(covered.mean()), rmse, mae), covered


def _fit_record(variant, origin, fit):
    d = fit.diagnostics
    return FitRecord(variant, origin, d.divergences, d.treedepth_hits,
                     d.rhat_max, d.ess_min, d.attempts, d.failed)


def run_fixed_holdout(panel, spec_pair, config):
    """Fit once per variant, then score the held-out tail one step ahead."""
    check_variant_pair(spec_pair)
    T = panel.T
    t_test = ingest.holdout_length(T)
    t_train = T - t_test
    if t_test < 1 or t_train <= spec_pair[model.RAW].burn_in:
        raise InvalidInput("panel too short for the holdout rule")
    panel = panel.with_train_standardization(t_train)
    S = config.resolved_score_draws()
    scores, records = {}, []
    for variant in VARIANTS:
        spec = spec_pair[variant]
        cfg = replace(config.sampler_full, seed=config.seed)
        fit = fit_with_refit(spec, panel.slice(0, t_train), cfg,
                             rhat_limit=config.rhat_limit,
                             ess_floor=config.ess_floor)
        records.append(_fit_record(variant, -1, fit))
        scores[variant], _ = _score_window(spec, fit.draws, panel, t_train,
                                           min(S, fit.draws.shape[0]),
                                           config.seed)
    report = EvalReport("fixed", config.to_dict(), scores, records,
                        t_train=t_train, t_test=t_test)
    report.diagnostics_totals = _totals(records, n_origins=1)
    return report


def _origin_task(args):
    (panel, spec_pair, sampler_light, base_seed, position, t0, S,
     rhat_limit, ess_floor) = args
    seed = base_seed + position
    sub = panel.slice(0, t0 + 1).with_train_standardization(t0)
    row = OriginRow(position, t0, panel.dates[t0], {}, {}, {}, {}, {}, {},
                    {})
    records = []
    try:
        truth = sub.Y[t0]
        rng_rep = {v: np.random.default_rng([seed, 4]) for v in VARIANTS}
        for variant in VARIANTS:
            spec = spec_pair[variant]
            cfg = replace(sampler_light, seed=seed)
            fit = fit_with_refit(spec, sub.slice(0, t0), cfg,
                                 rhat_limit=rhat_limit,
                                 ess_floor=ess_floor)
            records.append(_fit_record(variant, position, fit))
            mus, alphas = _one_step_parameters(
                spec, fit.draws, sub, t0, min(S, fit.draws.shape[0]), seed)
            reps = _replicate_compositions(alphas, rng_rep[variant])
            row.lpd[variant] = forecast.lpd_from_alpha(truth, alphas)
            row.covered[variant] = forecast.coverage_95(truth, reps).tolist()
            mu_point = mus.mean(axis=0)
            rmse, mae = forecast.point_errors(mu_point[None, :],
                                              truth[None, :])
            row.rmse[variant], row.mae[variant] = rmse, mae
            row.divergences[variant] = fit.diagnostics.divergences
            row.attempts[variant] = fit.diagnostics.attempts
            row.failed[variant] = fit.diagnostics.failed
    except DarmaError as exc:
        row.skipped = True
        row.note = str(exc)
    return row, records


def run_rolling(panel, spec_pair, config):
    """Refit both variants at every weekly origin and score one step ahead."""
    check_variant_pair(spec_pair)
    T = panel.T
    start = max(104, config.min_train)
    if start >= T:
        raise InvalidInput("panel too short for any rolling origin")
    S = config.resolved_score_draws()
    tasks = [(panel, spec_pair, config.sampler_light, config.seed, pos, t0,
              S, config.rhat_limit, config.ess_floor)
             for pos, t0 in enumerate(range(start, T))]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_origin_task, tasks))
    else:
        results = [_origin_task(t) for t in tasks]

    rows = [r for r, _ in results]
    records = [rec for _, recs in results for rec in recs]
    scored = [r for r in rows if not r.skipped]
    wins = sum(1 for r in scored if r.lpd_diff > 0)
    losses = sum(1 for r in scored if r.lpd_diff < 0)
    ties = len(scored) - wins - losses
    cum = np.cumsum([r.lpd_diff for r in scored]).tolist()
    scores = {}
    for variant in VARIANTS:
        lpd_t = [r.lpd[variant] for r in scored]
        covered = np.asarray([r.covered[variant] for r in scored], dtype=bool)
        scores[variant] = forecast.ScorePanel(
            math.fsum(lpd_t), lpd_t,
            float(covered.mean()) if covered.size else float("nan"),
            float(np.mean([r.rmse[variant] for r in scored]))
            if scored else float("nan"),
            float(np.mean([r.mae[variant] for r in scored]))
            if scored else float("nan"))
    report = EvalReport("rolling", config.to_dict(), scores, records,
                        origin_rows=rows, cum_elpd_diff=cum, wins=wins,
                        losses=losses, ties=ties)
    report.diagnostics_totals = _totals(records, n_origins=len(scored))
    return report


def _totals(records, n_origins):
    out = {}
    for variant in VARIANTS:
        recs = [r for r in records if r.variant == variant]
        out[variant] = {
            "divergences": int(sum(r.divergences for r in recs)),
            "treedepth_hits": int(sum(r.treedepth_hits for r in recs)),
            "any_divergence_share": float(np.mean(
                [r.divergences > 0 for r in recs])) if recs else 0.0,
            "avg_attempts": float(np.mean(
                [r.attempts for r in recs])) if recs else 0.0,
            "failed_fits": int(sum(r.failed for r in recs)),
        }
    out["n_origins"] = int(n_origins)
    return out


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(value):
    return repr(float(value))


def emit_report(report, out_dir, timestamp=None):
    """Write the report files into a timestamped results directory.

    Layout: ``results_<ts>/{summary.json, rolling_origins.csv, cum_elpd.csv,
    rolling_rmse.csv, holdout_bars.csv, table2.md, diagnostics.csv}``.  File
    contents carry no timestamps, so identical runs are byte-identical.
    """
    stamp = timestamp or datetime.datetime.now().strftime("%Y%m%d_%H%M%S_%f")
    out = os.path.join(out_dir, f"results_{stamp}")
    os.makedirs(out, exist_ok=True)

    summary = {
        "design": report.design,
        "config": report.config,
        "t_train": report.t_train,
        "t_test": report.t_test,
        "wins": report.wins,
        "losses": report.losses,
        "ties": report.ties,
        "elpd_diff_total": (report.cum_elpd_diff[-1]
                            if report.cum_elpd_diff else None),
        "scores": {v: sp.to_dict() for v, sp in report.scores.items()},
        "diagnostics": report.diagnostics_totals,
        "n_origins_scored": len([r for r in report.origin_rows
                                 if not r.skipped]),
        "n_origins_skipped": len([r for r in report.origin_rows
                                  if r.skipped]),
    }
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")

    origin_header = ["origin", "t0", "date",
                     "lpd_centered", "lpd_raw", "lpd_diff",
                     "rmse_centered", "rmse_raw", "mae_centered", "mae_raw",
                     "coverage_centered", "coverage_raw",
                     "divergences_centered", "divergences_raw",
                     "attempts_centered", "attempts_raw", "skipped"]
    scored = [r for r in report.origin_rows if not r.skipped]
    rows = []
    for r in report.origin_rows:
        if r.skipped:
            rows.append([r.index, r.t0, r.date] + [""] * 13 + ["1"])
            continue
        rows.append([
            r.index, r.t0, r.date,
            _fmt(r.lpd[model.CENTERED]), _fmt(r.lpd[model.RAW]),
            _fmt(r.lpd_diff),
            _fmt(r.rmse[model.CENTERED]), _fmt(r.rmse[model.RAW]),
            _fmt(r.mae[model.CENTERED]), _fmt(r.mae[model.RAW]),
            _fmt(np.mean(r.covered[model.CENTERED])),
            _fmt(np.mean(r.covered[model.RAW])),
            r.divergences[model.CENTERED], r.divergences[model.RAW],
            r.attempts[model.CENTERED], r.attempts[model.RAW], "0"])
    _write_csv(os.path.join(out, "rolling_origins.csv"), origin_header, rows)

    _write_csv(os.path.join(out, "cum_elpd.csv"),
               ["origin", "t0", "date", "cum_elpd_diff"],
               [[r.index, r.t0, r.date, _fmt(c)]
                for r, c in zip(scored, report.cum_elpd_diff)])

    _write_csv(os.path.join(out, "rolling_rmse.csv"),
               ["origin", "t0", "date", "rmse_centered", "rmse_raw"],
               [[r.index, r.t0, r.date, _fmt(r.rmse[model.CENTERED]),
                 _fmt(r.rmse[model.RAW])] for r in scored])

    bars = []
    for variant in VARIANTS:
        sp = report.scores.get(variant)
        if sp is None:
            continue
        bars.append([variant, _fmt(sp.elpd_sum), _fmt(sp.rmse),
                     _fmt(sp.mae), _fmt(sp.coverage)])
    _write_csv(os.path.join(out, "holdout_bars.csv"),
               ["model", "elpd_sum", "rmse", "mae", "coverage"], bars)

    _write_csv(os.path.join(out, "diagnostics.csv"),
               ["variant", "origin", "divergences", "treedepth_hits",
                "rhat_max", "ess_min", "attempts", "failed"],
               [[rec.variant, rec.origin, rec.divergences,
                 rec.treedepth_hits, _fmt(rec.rhat_max), _fmt(rec.ess_min),
                 rec.attempts, int(rec.failed)]
                for rec in report.fit_records])

    with open(os.path.join(out, "table2.md"), "w") as fh:
        fh.write(_summary_table(report))
    return out


def _summary_table(report):
    cen = report.scores.get(model.CENTERED)
    raw = report.scores.get(model.RAW)
    diag = report.diagnostics_totals
    dc, dr = diag.get(model.CENTERED, {}), diag.get(model.RAW, {})
    lines = [
        "| Metric | Centered MA | Raw MA | Difference |",
        "|---|---|---|---|",
        f"| ELPD (sum) | {cen.elpd_sum:.4f} | {raw.elpd_sum:.4f} | "
        f"{cen.elpd_sum - raw.elpd_sum:+.4f} |",
        f"| Wins on ELPD | {report.wins} vs {report.losses} "
        f"(ties: {report.ties}) | | |",
        f"| RMSE (mean) | {cen.rmse:.6g} | {raw.rmse:.6g} | "
        f"{cen.rmse - raw.rmse:+.3g} |",
        f"| MAE (mean) | {cen.mae:.6g} | {raw.mae:.6g} | "
        f"{cen.mae - raw.mae:+.3g} |",
        f"| 95% Coverage (mean) | {cen.coverage:.4f} | {raw.coverage:.4f} | "
        f"{cen.coverage - raw.coverage:+.4f} |",
        f"| Divergences (total) | {dc.get('divergences', 0)} | "
        f"{dr.get('divergences', 0)} | |",
        f"| Any divergence | {dc.get('any_divergence_share', 0.0):.3f} | "
        f"{dr.get('any_divergence_share', 0.0):.3f} | |",
        f"| Avg attempts per origin | {dc.get('avg_attempts', 0.0):.2f} | "
        f"{dr.get('avg_attempts', 0.0):.2f} | |",
    ]
    return "\n".join(lines) + "\n"


def read_origin_rows(path):
    """Parse a rolling_origins.csv back into per-origin dictionaries."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for rec in reader:
            row = {"origin": int(rec["origin"]), "t0": int(rec["t0"]),
                   "date": rec["date"], "skipped": rec["skipped"] == "1"}
            if not row["skipped"]:
                for key in ("lpd_centered", "lpd_raw", "lpd_diff",
                            "rmse_centered", "rmse_raw", "mae_centered",
                            "mae_raw", "coverage_centered", "coverage_raw"):
                    row[key] = float(rec[key])
                for key in ("divergences_centered", "divergences_raw",
                            "attempts_centered", "attempts_raw"):
                    row[key] = int(rec[key])
            rows.append(row)
    return rows

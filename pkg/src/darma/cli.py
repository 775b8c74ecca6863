"""Command-line entry point.

Subcommands: ``ingest`` (build the weekly panel), ``simulate`` (synthetic
panels), ``fit`` (posterior sampling for one variant), ``evaluate`` (fixed
holdout or rolling origins for both variants).  Options resolve as
flags > config file > defaults, every run writes its resolved configuration
into the output directory, and all randomness flows from ``--seed``.

Exit codes: 0 success, 2 invalid input, 3 data-integrity abort, 4 sampler
failure, 5 IO/fetch failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import harness, ingest, model
from .errors import (DarmaError, DataIntegrityError, FetchError, FormatError,
                     InitializationError, InvalidInput, NumericalError,
                     SamplerFailure)
from .inference import SamplerConfig, fit_with_refit, save_draws
from .panel import load_panel, save_panel

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_INTEGRITY = 3
EXIT_SAMPLER = 4
EXIT_IO = 5

FIT_DEFAULTS = {"variant": model.CENTERED, "P": 1, "Q": 1, "chains": 4,
                "iters": 2000, "warmup": 1000, "adapt_delta": 0.90,
                "treedepth": 12, "seed": 0, "score_draws": None}
EVAL_DEFAULTS = {"design": "fixed", "P": 1, "Q": 1, "seed": 0, "jobs": 1,
                 "min_train": 104, "score_draws": None,
                 "sampler_full": {}, "sampler_light": {}}


def _merge(defaults, file_cfg, flags):
    out = dict(defaults)
    out.update({k: v for k, v in (file_cfg or {}).items() if k in out})
    out.update({k: v for k, v in flags.items()
                if k in out and v is not None})
    return out


def _load_config_file(path):
    if not path:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise FetchError(f"cannot read config {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"config {path} is not valid JSON: {exc}")


def _write_resolved(out_dir, resolved):
    os.makedirs(out_dir, exist_ok=True)
    with open(Path(out_dir) / "resolved_config.json", "w") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def cmd_ingest(args):
    if not args.series_dir and not args.fetch:
        raise InvalidInput("supply --series-dir or --fetch")
    if args.series_dir:
        base = Path(args.series_dir)
        series = {}
        for role in ("total", "cash", "securities", "loans"):
            path = base / f"{role}.csv"
            if not path.exists():
                raise InvalidInput(f"missing {path}")
            series[role] = ingest.fetch_series(role.upper(), str(path))
        sa_flag = None
    else:
        series, sa_flag = ingest.fetch_h8_series()
    panel = ingest.build_panel(series, sa_flag=sa_flag)
    os.makedirs(args.out, exist_ok=True)
    csv_path, meta_path = save_panel(panel, Path(args.out) / "panel.csv")
    _write_resolved(args.out, {"command": "ingest",
                               "series_dir": args.series_dir,
                               "fetch": bool(args.fetch),
                               "rows": panel.T})
    print(f"wrote {csv_path} and {meta_path} ({panel.T} weeks)")
    return EXIT_OK


def _load_spec_json(path):
    with open(path) as fh:
        raw = json.load(fh)
    try:
        return model.DarmaSpec(
            P=int(raw["P"]), Q=int(raw["Q"]), J=int(raw["J"]),
            ref_index=int(raw["ref_index"]), variant=raw["variant"],
            M=int(raw.get("M", 1)), R_phi=int(raw.get("R_phi", 2)))
    except KeyError as exc:
        raise InvalidInput(f"spec file missing key {exc}")


def _load_params_json(path, spec):
    with open(path) as fh:
        raw = json.load(fh)
    try:
        params = model.DarmaParams(
            np.asarray(raw["A"], dtype=np.float64).reshape(
                spec.P, spec.K, spec.K),
            np.asarray(raw["B"], dtype=np.float64).reshape(
                spec.Q, spec.K, spec.K),
            np.asarray(raw["beta"], dtype=np.float64).reshape(
                spec.K, spec.M),
            np.asarray(raw["gamma"], dtype=np.float64).reshape(spec.R_phi))
    except (KeyError, ValueError) as exc:
        raise InvalidInput(f"bad parameter file: {exc}")
    return params


def cmd_simulate(args):
    spec = _load_spec_json(args.spec)
    params = _load_params_json(args.params, spec)
    T = args.T
    X = np.ones((T, spec.M))
    Z = np.zeros((T, spec.R_phi))
    Z[:, 0] = 1.0
    panel = model.simulate(spec, params, T, X, Z, rng_seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    csv_path, meta_path = save_panel(panel, Path(args.out) / "panel.csv")
    truth = {"spec": {"P": spec.P, "Q": spec.Q, "J": spec.J,
                      "ref_index": spec.ref_index, "variant": spec.variant,
                      "M": spec.M, "R_phi": spec.R_phi},
             "params": {"A": params.A.tolist(), "B": params.B.tolist(),
                        "beta": params.beta.tolist(),
                        "gamma": params.gamma.tolist()},
             "seed": args.seed}
    with open(Path(args.out) / "truth.json", "w") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_resolved(args.out, {"command": "simulate", "T": T,
                               "seed": args.seed, "spec": truth["spec"]})
    print(f"wrote {csv_path} ({T} weeks)")
    return EXIT_OK


def _read_panel(path):
    try:
        return load_panel(path)
    except OSError as exc:
        raise InvalidInput(f"cannot read panel {path}: {exc}")


def cmd_fit(args):
    cfg = _merge(FIT_DEFAULTS, _load_config_file(args.config), vars(args))
    panel = _read_panel(args.panel)
    ref = int(panel.meta.get("ref_index", ingest.LOANS_INDEX))
    spec = model.DarmaSpec(P=int(cfg["P"]), Q=int(cfg["Q"]), J=panel.J,
                           ref_index=ref, variant=cfg["variant"],
                           M=panel.X.shape[1], R_phi=panel.Z.shape[1])
    sampler = SamplerConfig(chains=int(cfg["chains"]),
                            iterations=int(cfg["iters"]),
                            warmup=int(cfg["warmup"]),
                            target_accept=float(cfg["adapt_delta"]),
                            max_treedepth=int(cfg["treedepth"]),
                            seed=int(cfg["seed"]))
    fit = fit_with_refit(spec, panel, sampler)
    os.makedirs(args.out, exist_ok=True)
    csv_path, json_path = save_draws(fit, Path(args.out) / "draws.csv",
                                     Path(args.out) / "diagnostics.json")
    _write_resolved(args.out, {"command": "fit", "panel": args.panel,
                               "spec": {"P": spec.P, "Q": spec.Q,
                                        "J": spec.J, "ref_index": ref,
                                        "variant": spec.variant},
                               "sampler": vars(fit.config)
                               if fit.config else vars(sampler)})
    print(f"wrote {csv_path} and {json_path} "
          f"(attempts={fit.diagnostics.attempts}, "
          f"divergences={fit.diagnostics.divergences})")
    return EXIT_OK


def _sampler_from(cfg_dict, base, seed):
    merged = {"chains": base.chains, "iterations": base.iterations,
              "warmup": base.warmup, "target_accept": base.target_accept,
              "max_treedepth": base.max_treedepth, "init": base.init}
    merged.update(cfg_dict or {})
    return SamplerConfig(seed=seed, **merged)


def cmd_evaluate(args):
    cfg = _merge(EVAL_DEFAULTS, _load_config_file(args.config), vars(args))
    panel = _read_panel(args.panel)
    ref = int(panel.meta.get("ref_index", ingest.LOANS_INDEX))
    base = model.DarmaSpec(P=int(cfg["P"]), Q=int(cfg["Q"]), J=panel.J,
                           ref_index=ref, variant=model.CENTERED,
                           M=panel.X.shape[1], R_phi=panel.Z.shape[1])
    spec_pair = model.variant_pair(base)
    seed = int(cfg["seed"])
    config = harness.EvalConfig(
        design=cfg["design"], min_train=int(cfg["min_train"]),
        sampler_full=_sampler_from(cfg["sampler_full"], SamplerConfig(),
                                   seed),
        sampler_light=_sampler_from(
            cfg["sampler_light"],
            SamplerConfig(chains=2, iterations=1200, warmup=600,
                          target_accept=0.95), seed),
        score_draws=cfg["score_draws"], seed=seed, jobs=int(cfg["jobs"]))
    if config.design == "fixed":
        report = harness.run_fixed_holdout(panel, spec_pair, config)
    else:
        report = harness.run_rolling(panel, spec_pair, config)
    out = harness.emit_report(report, args.out)
    _write_resolved(args.out, {"command": "evaluate",
                               "panel": args.panel,
                               "config": config.to_dict()})
    print(f"wrote report to {out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="darma",
        description="Dirichlet ARMA compositional forecasting")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build the weekly share panel")
    p.add_argument("--series-dir", help="directory with <role>.csv files")
    p.add_argument("--fetch", action="store_true",
                   help="download the series instead of reading local files")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("simulate", help="draw a synthetic panel")
    p.add_argument("--spec", required=True, help="model spec JSON")
    p.add_argument("--params", required=True, help="parameter JSON")
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="sample the posterior of one variant")
    p.add_argument("--panel", required=True)
    p.add_argument("--variant", choices=[model.RAW, model.CENTERED],
                   default=None)
    p.add_argument("--P", type=int, default=None)
    p.add_argument("--Q", type=int, default=None)
    p.add_argument("--chains", type=int, default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--warmup", type=int, default=None)
    p.add_argument("--adapt-delta", dest="adapt_delta", type=float,
                   default=None)
    p.add_argument("--treedepth", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("evaluate", help="run a holdout or rolling design")
    p.add_argument("--panel", required=True)
    p.add_argument("--design", choices=["fixed", "rolling"], default=None)
    p.add_argument("--P", type=int, default=None)
    p.add_argument("--Q", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--min-train", dest="min_train", type=int, default=None)
    p.add_argument("--score-draws", dest="score_draws", type=int,
                   default=None)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataIntegrityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (InvalidInput, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (SamplerFailure, InitializationError, NumericalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SAMPLER
    except (FetchError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DarmaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())

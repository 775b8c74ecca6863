"""Benchmark the compiled kernels against the pure-NumPy fallback.

Times the three hot paths (filter, log likelihood, likelihood+gradient) on
a simulated panel, then a short sampler run end to end.  Run as:

    python benchmarks/bench_kernels.py --T 400 --reps 50
"""
import argparse
import time

import numpy as np

from darma import model, simplex
from darma._kernels import _ref

try:
    from darma._kernels import _core
except ImportError:
    _core = None


def _build_case(T, seed=0):
    spec = model.DarmaSpec(P=1, Q=1, J=4, ref_index=2, variant="centered")
    params = model.DarmaParams(
        np.array([[[0.4, 0.05, 0.0], [0.0, 0.35, 0.05],
                   [0.05, 0.0, 0.4]]]),
        np.array([[[0.25, 0.0, 0.05], [0.05, 0.2, 0.0], [0.0, 0.05, 0.25]]]),
        np.array([[-1.10], [-1.53], [-2.15]]),
        np.array([np.log(150.0), 0.1]),
    )
    X = np.ones((T, 1))
    Z = np.column_stack([np.ones(T), np.sin(np.arange(T) / 7.0)])
    panel = model.simulate(spec, params, T, X, Z, rng_seed=seed)
    alr_y = np.ascontiguousarray(simplex.alr(panel.Y, spec.ref_index))
    log_y = np.ascontiguousarray(np.log(panel.Y))
    args = (alr_y, log_y, panel.X, panel.Z, params.A, params.B, params.beta,
            params.gamma, spec.ref_index, 1, 1e-10)
    return spec, params, panel, args


def _time(fn, reps):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(reps):
        fn()
    return (time.perf_counter() - t0) / reps


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--T", type=int, default=400)
    parser.add_argument("--reps", type=int, default=50)
    args = parser.parse_args()

    spec, params, panel, kargs = _build_case(args.T)
    backends = [("python", _ref)] + ([("cython", _core)] if _core else [])
    if _core is None:
        print("compiled core unavailable; timing the fallback only")

    rows = []
    for name, impl in backends:
        t_filter = _time(lambda: impl.filter_path(
            kargs[0], *kargs[2:]), args.reps)
        t_ll = _time(lambda: impl.loglik(*kargs, 0), args.reps)
        t_grad = _time(lambda: impl.loglik(*kargs, 1), args.reps)
        rows.append((name, t_filter, t_ll, t_grad))

    print(f"\nT = {args.T}, reps = {args.reps}  (mean microseconds/call)")
    print(f"{'backend':<10}{'filter':>12}{'loglik':>12}{'loglik+grad':>14}")
    for name, tf, tl, tg in rows:
        print(f"{name:<10}{tf * 1e6:>12.1f}{tl * 1e6:>12.1f}"
              f"{tg * 1e6:>14.1f}")
    if len(rows) == 2:
        py, cy = rows[0], rows[1]
        print(f"{'speedup':<10}{py[1] / cy[1]:>12.1f}{py[2] / cy[2]:>12.1f}"
              f"{py[3] / cy[3]:>14.1f}")

    print("\nsampler end-to-end (2 chains x 200 iterations):")
    from darma import inference
    import darma._kernels as kernels
    cfg = inference.SamplerConfig(chains=2, iterations=200, warmup=100,
                                  seed=0)
    for name, impl in backends:
        for fn in ("filter_path", "loglik"):
            setattr(kernels, fn, getattr(impl, fn))
        # model module reads the functions through the package namespace
        t0 = time.perf_counter()
        inference.sample_posterior(spec, panel, cfg)
        print(f"{name:<10}{time.perf_counter() - t0:>10.2f} s")
    for fn in ("filter_path", "loglik"):
        setattr(kernels, fn, getattr(backends[-1][1], fn))


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Benchmark the histogram kernels: compiled extension vs numpy fallback.

Times the two hot training kernels in isolation and a full boosted fit with
each backend, and verifies the outputs match bit for bit while at it.

Usage: python benchmarks/bench_kernels.py [--rows 20000] [--features 30] [--repeat 5]
"""

import argparse
import time

import numpy as np

from gpuforecast.gbdt import GbdtParams, canonical_dumps, fit_multiclass, model_to_dict
from gpuforecast.gbdt.binning import MISSING_BIN
from gpuforecast.gbdt.kernels import available_backends


def timeit(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rows", type=int, default=20_000)
    ap.add_argument("--features", type=int, default=30)
    ap.add_argument("--bins", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    backends = available_backends()
    print(f"available backends: {sorted(backends)}")
    if "cy" not in backends:
        print("compiled backend not built; benchmarking the numpy fallback only")

    rng = np.random.default_rng(0)
    codes = rng.integers(0, args.bins, size=(args.rows, args.features)).astype(np.uint8)
    codes[rng.random(codes.shape) < 0.02] = MISSING_BIN
    idx = np.arange(args.rows, dtype=np.int64)
    grad = rng.normal(size=args.rows)
    hess = rng.uniform(0.1, 1.0, size=args.rows)
    vb = np.full(args.features, args.bins, dtype=np.int64)
    totals = (float(grad.sum()), float(hess.sum()), args.rows)

    print(f"\nkernels on {args.rows} rows x {args.features} features, {args.bins} bins")
    print(f"{'kernel':<22}{'backend':<10}{'best (ms)':>12}{'speedup':>10}")
    results = {}
    for name, mod in sorted(backends.items()):
        hist = timeit(lambda m=mod: m.build_histograms(codes, idx, grad, hess), args.repeat)
        hg, hh, hc = mod.build_histograms(codes, idx, grad, hess)
        scan = timeit(
            lambda m=mod: m.scan_splits(hg, hh, hc, vb, *totals, 1.0, 20), args.repeat
        )
        results[name] = (hist, scan)
    for kernel, i in (("build_histograms", 0), ("scan_splits", 1)):
        base = results["py"][i]
        for name in sorted(results):
            t = results[name][i]
            print(f"{kernel:<22}{name:<10}{t * 1e3:>12.3f}{base / t:>9.1f}x")

    print("\nend-to-end 4-band fit (30 rounds)")
    X = rng.normal(size=(args.rows, args.features))
    y = (X[:, 0] > 0).astype(int) + 2 * (X[:, 1] > 0).astype(int)
    params = GbdtParams(rounds=30, bins=args.bins)
    fits = {}
    models = {}
    for name, mod in sorted(backends.items()):
        t0 = time.perf_counter()
        models[name] = fit_multiclass(X, y, params, backend=mod)
        fits[name] = time.perf_counter() - t0
    for name in sorted(fits):
        print(f"{'fit_multiclass':<22}{name:<10}{fits[name] * 1e3:>12.1f}{fits['py'] / fits[name]:>9.1f}x")

    if len(models) == 2:
        same = canonical_dumps(model_to_dict(models["py"])) == canonical_dumps(model_to_dict(models["cy"]))
        print(f"\nbackends produce bit-identical models: {same}")
        if not same:
            raise SystemExit(1)


if __name__ == "__main__":
    main()

"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--n 200000] [--repeat 20]

Also times one uncompressed DR fit per backend, which is what the kernels
are there for.
"""
import argparse
import timeit

import numpy as np

from mnariv import kernels
from mnariv.estimators import estimate
from mnariv.simharness import generate_dataset, scenario_config


def kernel_cases(n, rng):
    r = (rng.random(n) < 0.7).astype(float)
    y = np.where(r == 1, (rng.random(n) < 0.5).astype(float), 0.0)
    lin, lin2 = rng.normal(size=n), rng.normal(size=n)
    q1 = rng.uniform(0.2, 0.8, n)
    th = rng.normal(size=(4, n))
    return {
        "expit": lambda: kernels.expit(lin),
        "propensity_weights": lambda: kernels.propensity_weights(r, lin + 2, y, 0.5),
        "dr_terms": lambda: kernels.dr_terms(r, y, lin + 2, lin2, 0.5),
        "efficiency_cells": lambda: kernels.efficiency_cells(q1, lin, lin2, th[0], th[1], 0.5),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    cases = kernel_cases(args.n, rng)
    backends = sorted(kernels.BACKENDS)
    if "compiled" not in backends:
        print("compiled extension not built; timing the python backend only")

    print(f"{'kernel':<20}" + "".join(f"{b + ' ms':>14}" for b in backends) + f"{'speedup':>10}")
    for name, fn in cases.items():
        times = {}
        for b in backends:
            kernels.use_backend(b)
            fn()
            times[b] = 1e3 * min(timeit.repeat(fn, number=1, repeat=args.repeat))
        ratio = times["python"] / times["compiled"] if "compiled" in times else float("nan")
        print(f"{name:<20}" + "".join(f"{times[b]:14.3f}" for b in backends) + f"{ratio:10.2f}")

    data = generate_dataset(5000, 0)
    cfg = scenario_config("iii")
    print(f"\n{'DR fit, n=5000':<20}" + "".join(f"{b + ' ms':>14}" for b in backends))
    row = []
    for b in backends:
        kernels.use_backend(b)
        fit = lambda: estimate(data, cfg, "IV_DR", compress=False)
        fit()
        row.append(1e3 * min(timeit.repeat(fit, number=1, repeat=3)))
    print(f"{'':<20}" + "".join(f"{t:14.1f}" for t in row))


if __name__ == "__main__":
    main()

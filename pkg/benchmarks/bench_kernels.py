#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-Python fallback.

Times the replicator-dynamics integration path and non-dominated sorting on
growing problem sizes and reports the speedup. Run after an editable
install:

    python benchmarks/bench_kernels.py
"""

import argparse
import time

import numpy as np

from fedmob import _pykernels

try:
    from fedmob import _kernels
except ImportError:
    _kernels = None


def _best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_replicator(steps_list, repeats):
    rewards = np.array([600.0, 750.0, 900.0])
    weights = np.array([100.0, 100.0, 100.0])
    q = np.array([2.0, 3.0, 4.0])
    x0 = np.array([0.18, 0.32, 0.50])
    rows = []
    for steps in steps_list:
        t_pure = _best_of(lambda: _pykernels.replicator_path(
            x0, rewards, weights, 1.0, 0.001, q, 0.01, steps), repeats)
        if _kernels is not None:
            t_comp = _best_of(lambda: _kernels.replicator_path(
                x0, rewards, weights, 1.0, 0.001, q, 0.01, steps), repeats)
        else:
            t_comp = float("nan")
        rows.append(("replicator_path", steps, t_pure, t_comp))
    return rows


def bench_sorting(sizes, repeats):
    rng = np.random.default_rng(7)
    rows = []
    for n in sizes:
        objs = rng.uniform(0, 1, (n, 2))
        t_pure = _best_of(lambda: _pykernels.nondominated_fronts(objs), repeats)
        if _kernels is not None:
            t_comp = _best_of(lambda: _kernels.nondominated_fronts(objs), repeats)
        else:
            t_comp = float("nan")
        rows.append(("nondominated_fronts", n, t_pure, t_comp))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if _kernels is None:
        print("compiled kernels not available; timing the fallback only")

    rows = bench_replicator([1_000, 10_000, 50_000], args.repeats)
    rows += bench_sorting([50, 100, 200, 400], args.repeats)

    print(f"{'kernel':<22}{'size':>8}{'pure [ms]':>12}{'compiled [ms]':>15}{'speedup':>9}")
    for name, size, t_pure, t_comp in rows:
        speed = t_pure / t_comp if t_comp == t_comp and t_comp > 0 else float("nan")
        print(f"{name:<22}{size:>8}{t_pure * 1e3:>12.3f}{t_comp * 1e3:>15.3f}{speed:>9.1f}")

    if _kernels is not None:
        states_c, derivs_c = _kernels.replicator_path(
            np.array([0.18, 0.32, 0.50]), np.array([600.0, 750.0, 900.0]),
            np.array([100.0] * 3), 1.0, 0.001, np.array([2.0, 3.0, 4.0]), 0.01, 1000)
        states_p, derivs_p = _pykernels.replicator_path(
            np.array([0.18, 0.32, 0.50]), np.array([600.0, 750.0, 900.0]),
            np.array([100.0] * 3), 1.0, 0.001, np.array([2.0, 3.0, 4.0]), 0.01, 1000)
        same = np.array_equal(states_c, states_p) and np.array_equal(derivs_c, derivs_p)
        print(f"\nbackend agreement on a 1000-step path: {'bitwise equal' if same else 'MISMATCH'}")


if __name__ == "__main__":
    main()

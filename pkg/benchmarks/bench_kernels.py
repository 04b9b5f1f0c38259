#!/usr/bin/env python3
"""Time the numba and pure-numpy kernel paths side by side.

Run after an editable install:

    python benchmarks/bench_kernels.py [--repeats 5]

The numba path needs one warm-up call per kernel (JIT compilation);
warm-up time is excluded.  Set VOLCAST_DISABLE_NUMBA=1 to confirm the
package runs on the numpy path alone (this script then only times it).
"""

import argparse
import time

import numpy as np

from volcast import kernels
from volcast._accel import USE_NUMBA


def _time(fn, args, repeats):
    fn(*args)  # warm-up (JIT compile on the numba path)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _workloads(rng):
    z = rng.gamma(5.0, 0.2, 26 * 250)
    mem_args = (z, 0.2, 0.25, 0.55, 1.0)

    X = rng.standard_normal((2000, 60))
    X = (X - X.mean(0)) / X.std(0)
    y = X @ rng.standard_normal(60) + rng.standard_normal(2000)
    y = y - y.mean()
    lasso_args = (np.ascontiguousarray(X), y, 0.05, np.zeros(60), 200, 1e-10)

    xs = np.sort(rng.standard_normal(20000))
    gs = rng.standard_normal(20000)
    split_args = (xs, gs, 1.0, 0.0, 1.0)

    P = rng.standard_normal((5000, 8))
    C = rng.standard_normal((50, 8))
    assign_args = (P, C)

    return [
        ("mem_recursion (6.5k bins)", "mem_recursion", mem_args),
        ("lasso_cd (2000x60)", "lasso_cd", lasso_args),
        ("split_scan (20k rows)", "split_scan", split_args),
        ("assign_nearest (5k x 50)", "assign_nearest", assign_args),
    ]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    rows = []
    for label, name, work in _workloads(rng):
        numpy_fn = getattr(kernels, f"{name}_numpy")
        t_numpy = _time(numpy_fn, work, args.repeats)
        if USE_NUMBA:
            numba_fn = getattr(kernels, f"{name}_numba")
            t_numba = _time(numba_fn, work, args.repeats)
            rows.append((label, t_numba, t_numpy, t_numpy / t_numba))
        else:
            rows.append((label, None, t_numpy, None))

    print(f"{'kernel':34s} {'numba':>12s} {'numpy':>12s} {'speedup':>9s}")
    for label, t_nb, t_np, ratio in rows:
        nb = f"{t_nb * 1e3:9.3f} ms" if t_nb is not None else "   disabled"
        sp = f"{ratio:8.1f}x" if ratio is not None else "        -"
        print(f"{label:34s} {nb:>12s} {t_np * 1e3:9.3f} ms {sp}")
    if not USE_NUMBA:
        print("\nnumba path disabled (VOLCAST_DISABLE_NUMBA or import failure)")


if __name__ == "__main__":
    main()

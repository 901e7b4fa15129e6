"""Time the numba kernels against their numpy counterparts.

Usage: python3 benchmarks/bench_kernels.py [--rows N] [--strata K] [--batch B] [--repeat R]

Each kernel is called once before timing so that JIT compilation is not
counted. The script also checks that both backends return the same values.
"""
import argparse
import time

import numpy as np

from trialmiss._kernels import (
    FALLBACK_MIDPOINT,
    HAS_NUMBA,
    MODE_MIDPOINT,
    MODE_SMOOTH,
    NUMBA_KERNELS,
    NUMPY_KERNELS,
)


def _best_of(fn, repeat):
    fn()
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def _inputs(rows, strata, batch, seed):
    rng = np.random.default_rng(seed)
    codes = rng.integers(0, strata, rows)
    t = rng.integers(0, 2, rows)
    a = (rng.random(rows) < 0.7).astype(np.int64)
    o = np.where(a == 1, rng.integers(0, 2, rows), -1)
    cells = NUMPY_KERNELS["count_cells"](codes, t, o, a, strata)
    tables = NUMPY_KERNELS["multinomial_resample"](cells, batch, rng).astype(np.float64)
    return (codes, t, o, a), tables


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rows", type=int, default=200_000)
    p.add_argument("--strata", type=int, default=54)
    p.add_argument("--batch", type=int, default=2_000)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    if not HAS_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")

    (codes, t, o, a), tables = _inputs(args.rows, args.strata, args.batch, args.seed)
    cases = [
        ("count_cells", lambda k: k["count_cells"](codes, t, o, a, args.strata)),
        ("phi_batch midpoint", lambda k: k["phi_batch"](tables, 1, MODE_MIDPOINT, FALLBACK_MIDPOINT, True)),
        ("phi_batch smooth", lambda k: k["phi_batch"](tables, 1, MODE_SMOOTH, FALLBACK_MIDPOINT, True)),
    ]
    print(f"rows={args.rows} strata={args.strata} batch={args.batch} best of {args.repeat}")
    print(f"{'kernel':<22}{'numpy (ms)':>12}{'numba (ms)':>12}{'speedup':>10}  agree")
    for name, call in cases:
        ref, fast = call(NUMPY_KERNELS), call(NUMBA_KERNELS)
        agree = np.allclose(ref, fast, rtol=1e-9, atol=1e-12, equal_nan=True)
        t_np = _best_of(lambda: call(NUMPY_KERNELS), args.repeat)
        t_nb = _best_of(lambda: call(NUMBA_KERNELS), args.repeat)
        print(f"{name:<22}{t_np * 1e3:>12.2f}{t_nb * 1e3:>12.2f}{t_np / t_nb:>9.1f}x  {agree}")


if __name__ == "__main__":
    main()

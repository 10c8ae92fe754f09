"""Benchmark the compiled nearest-codeword kernel against the numpy fallback.

Usage:
    python3 benchmarks/bench_kernels.py [--repeats N]

Both backends compute exact nearest-codeword assignments; the compiled
extension wins on small batches/codebooks where BLAS call overhead
dominates, while the numpy path (one big matmul) wins on large shapes.
"""

import argparse
import time

import numpy as np

from streamvq import kernels
from streamvq import _kernels_py

SHAPES = [
    # (rows, dim, codewords)
    (100, 8, 32),
    (1_000, 8, 32),
    (1_000, 64, 128),
    (10_000, 64, 128),
    (10_000, 64, 1024),
    (2_000, 128, 1024),
]


def bench(fn, x, c, repeats):
    fn(x, c)  # warm up
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(x, c)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    if kernels.BACKEND != "cython":
        print("compiled extension not available; benchmarking numpy only")
    print(f"selected backend at import: {kernels.BACKEND}")
    print(f"{'rows':>7} {'dim':>5} {'codes':>6} {'numpy (ms)':>12} "
          f"{'compiled (ms)':>14} {'speedup':>8}")
    gen = np.random.default_rng(0)
    for rows, dim, codes in SHAPES:
        x = np.ascontiguousarray(gen.normal(size=(rows, dim)))
        c = np.ascontiguousarray(gen.normal(size=(codes, dim)))
        t_py = bench(_kernels_py.assign_nearest, x, c, args.repeats)
        line = f"{rows:>7} {dim:>5} {codes:>6} {t_py * 1e3:>12.2f}"
        if kernels.BACKEND == "cython":
            from streamvq import _kernels

            idx_a, d_a = _kernels_py.assign_nearest(x, c)
            idx_b, d_b = _kernels.assign_nearest(x, c)
            assert np.array_equal(idx_a, idx_b), "backends disagree"
            assert np.allclose(d_a, d_b)
            t_cy = bench(_kernels.assign_nearest, x, c, args.repeats)
            line += f" {t_cy * 1e3:>14.2f} {t_py / t_cy:>7.2f}x"
        print(line)


if __name__ == "__main__":
    main()

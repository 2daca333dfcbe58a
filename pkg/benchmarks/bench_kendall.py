"""Compare the compiled and pure-Python inversion-counting kernels.

Usage: python3 benchmarks/bench_kendall.py [--sizes 1000 10000 100000]
"""

import argparse
import statistics
import time

import numpy as np

import simvec._kendall_py as kendall_py
from simvec.kendall_kernel import COMPILED

try:
    import simvec._kendall_c as kendall_c
except ImportError:
    kendall_c = None


def time_kernel(fn, arr, repetitions):
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn(arr)
        times.append(time.perf_counter() - t0)
    return statistics.median(times) * 1e3


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", type=int, nargs="+",
                        default=[1_000, 10_000, 100_000])
    parser.add_argument("--repetitions", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    print(f"active kernel: {'compiled' if COMPILED else 'pure python'}")
    header = f"{'n':>10} {'python ms':>12} {'compiled ms':>12} {'speedup':>9}"
    print(header)
    print("-" * len(header))
    rng = np.random.default_rng(args.seed)
    for n in args.sizes:
        arr = rng.integers(0, max(2, n // 10), n).astype(np.int64)
        py_ms = time_kernel(kendall_py.count_inversions, arr,
                            args.repetitions)
        if kendall_c is None:
            print(f"{n:>10} {py_ms:>12.3f} {'n/a':>12} {'n/a':>9}")
            continue
        c_ms = time_kernel(kendall_c.count_inversions, arr, args.repetitions)
        assert kendall_c.count_inversions(arr) == \
            kendall_py.count_inversions(arr)
        print(f"{n:>10} {py_ms:>12.3f} {c_ms:>12.3f} {py_ms / c_ms:>8.1f}x")


if __name__ == "__main__":
    main()

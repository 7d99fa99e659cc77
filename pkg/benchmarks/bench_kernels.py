#!/usr/bin/env python3
"""Times the compiled nearest-neighbor kernel against the NumPy fallback.

The kernel dominates pairwise Chamfer evaluation, so this is the number that
decides whether building the extension is worth it on a given machine.

    python3 benchmarks/bench_kernels.py [--points 2048] [--pairs 20]
"""

import argparse
import time

import numpy as np

from meshtok._kernels import _nn_py
from meshtok._kernels import backend, nn_sqdists


def time_backend(fn, clouds, pairs):
    start = time.perf_counter()
    for i, j in pairs:
        fn(clouds[i], clouds[j])
        fn(clouds[j], clouds[i])
    return time.perf_counter() - start


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--points", type=int, default=2048)
    parser.add_argument("--clouds", type=int, default=8)
    parser.add_argument("--pairs", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    clouds = [rng.uniform(-0.5, 0.5, size=(args.points, 3)) for _ in range(args.clouds)]
    pairs = [tuple(rng.integers(0, args.clouds, size=2)) for _ in range(args.pairs)]

    # correctness first: both backends must agree bitwise
    for i, j in pairs[: min(5, len(pairs))]:
        assert np.array_equal(nn_sqdists(clouds[i], clouds[j]), _nn_py.nn_sqdists(clouds[i], clouds[j]))

    active = time_backend(nn_sqdists, clouds, pairs)
    fallback = time_backend(_nn_py.nn_sqdists, clouds, pairs)

    per_pair_active = active / (2 * args.pairs) * 1000
    per_pair_fallback = fallback / (2 * args.pairs) * 1000
    print(f"points per cloud : {args.points}")
    print(f"directed queries : {2 * args.pairs}")
    print(f"active backend   : {backend():>7s}  {per_pair_active:8.2f} ms/query")
    print(f"numpy fallback   :   numpy  {per_pair_fallback:8.2f} ms/query")
    if backend() == "cython":
        print(f"speedup          : {fallback / active:8.2f}x")
    else:
        print("speedup          : extension not built; fallback is the active backend")


if __name__ == "__main__":
    main()

"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from hetgnn import _fallback

try:
    from hetgnn import _core
except ImportError:
    _core = None


def cases(rng):
    for n_edges, width, n_targets in [(5_000, 256, 500), (50_000, 256, 5_000)]:
        values = rng.normal(size=(n_edges, width))
        index = rng.integers(0, n_targets, n_edges)
        yield f"scatter_add E={n_edges} w={width}", "scatter_add", (values, index, n_targets)
    for n, d in [(60, 512), (200, 512), (1_000, 2)]:
        yield f"knn_indices n={n} d={d} k=5", "knn_indices", (rng.normal(size=(n, d)), 5)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<32}{'numpy ms':>12}{'compiled ms':>14}{'speedup':>10}")
    for label, fn, call_args in cases(rng):
        slow = min(timeit.repeat(lambda: getattr(_fallback, fn)(*call_args), number=1, repeat=args.repeat))
        if _core is None:
            print(f"{label:<32}{slow * 1e3:>12.2f}{'n/a':>14}{'':>10}")
            continue
        fast = min(timeit.repeat(lambda: getattr(_core, fn)(*call_args), number=1, repeat=args.repeat))
        print(f"{label:<32}{slow * 1e3:>12.2f}{fast * 1e3:>14.2f}{slow / fast:>9.1f}x")


if __name__ == "__main__":
    main()

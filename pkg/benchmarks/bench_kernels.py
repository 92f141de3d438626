"""Time the compiled kernels against the numpy fallback on synthetic fixed-effect data.

Usage: python3 benchmarks/bench_kernels.py [--rows N] [--repeat R]
"""

import argparse
import timeit

import numpy as np

from superspill.econometrics import _fallback

try:
    from superspill.econometrics import _ckernels
except ImportError:
    _ckernels = None


def make_data(n_rows: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    sizes = np.array([max(2, n_rows // 20), 50, 15], dtype=np.int64)
    codes = np.vstack([rng.integers(0, s, n_rows) for s in sizes]).astype(np.int64)
    X = np.ascontiguousarray(rng.normal(size=(4, n_rows)))
    scores = rng.normal(size=(n_rows, 5))
    clusters = rng.integers(0, n_rows // 5, n_rows).astype(np.int64)
    return X, codes, sizes, np.ones(n_rows), scores, clusters


def run(impl, data, repeat: int) -> dict:
    X, codes, sizes, w, scores, clusters = data

    def demean():
        impl.demean_inplace(X.copy(), codes, sizes, w, 1e-8, 10000)

    def sums():
        impl.cluster_sums(scores, clusters, int(clusters.max()) + 1)

    return {"demean": min(timeit.repeat(demean, number=1, repeat=repeat)),
            "cluster_sums": min(timeit.repeat(sums, number=1, repeat=repeat))}


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--rows", type=int, default=50_000)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    data = make_data(args.rows)

    X, codes, sizes, w, scores, clusters = data
    a, b = X.copy(), X.copy()
    _fallback.demean_inplace(a, codes, sizes, w, 1e-8, 10000)
    if _ckernels is not None:
        _ckernels.demean_inplace(b, codes, sizes, w, 1e-8, 10000)
        print(f"max |compiled - fallback| after demeaning: {np.abs(a - b).max():.2e}")

    rows = [("python", run(_fallback, data, args.repeat))]
    if _ckernels is not None:
        rows.append(("compiled", run(_ckernels, data, args.repeat)))
    else:
        print("compiled kernels not built; timing the fallback only")
    print(f"{'kernel':<14}{'impl':<10}{'seconds':>10}")
    for kernel in ("demean", "cluster_sums"):
        for name, t in rows:
            print(f"{kernel:<14}{name:<10}{t[kernel]:>10.4f}")
        if len(rows) == 2:
            print(f"{'':<14}{'speedup':<10}{rows[0][1][kernel] / rows[1][1][kernel]:>10.2f}x")


if __name__ == "__main__":
    main()

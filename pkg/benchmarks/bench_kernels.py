"""Compare the compiled clustering kernel against the pure-Python fallback.

Usage: python benchmarks/bench_kernels.py [--sizes 500,2000,8000] [--tol 1.5]
"""

import argparse
import time

import numpy as np

from racenav import kernels, _kernels_py


def time_fn(fn, pts, tol, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(pts, tol)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="500,2000,8000")
    ap.add_argument("--tol", type=float, default=1.5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    sizes = [int(s) for s in args.sizes.split(",")]
    rng = np.random.default_rng(args.seed)

    backends = [("python", _kernels_py.connected_labels)]
    if kernels.BACKEND == "compiled":
        backends.append(("compiled", kernels.connected_labels))
    else:
        print("note: compiled extension unavailable, timing fallback only")

    print(f"{'n':>8} " + " ".join(f"{name:>12}" for name, _ in backends) + "  speedup")
    for n in sizes:
        pts = rng.uniform(-30, 30, size=(n, 3))
        labels = [fn(pts, args.tol) for _, fn in backends]
        for got in labels[1:]:
            np.testing.assert_array_equal(got, labels[0])
        times = [time_fn(fn, pts, args.tol) for _, fn in backends]
        ratio = times[0] / times[-1] if len(times) > 1 else float("nan")
        print(
            f"{n:>8} "
            + " ".join(f"{t * 1e3:>10.2f}ms" for t in times)
            + f"  {ratio:>6.1f}x"
        )


if __name__ == "__main__":
    main()

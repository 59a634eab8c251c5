"""Time the two-stage threshold sweep on both kernel backends.

    python3 benchmarks/bench_threshold_search.py --n 25000 --repeat 3
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from fraudrl import kernels
from fraudrl.evaluation import quantize_dollars


def make_scores(n: int, seed: int):
    rng = np.random.default_rng(seed)
    label = rng.random(n) < 0.0132
    p0 = np.round(np.where(label, rng.beta(4, 2.2, n), rng.beta(1.2, 9, n)), 4)
    p1 = np.round(np.where(label, rng.beta(3, 3, n), rng.beta(1.5, 8, n)), 4)
    w = quantize_dollars(np.round(rng.lognormal(4.0, 1.2, n), 2))
    return p0, p1, np.where(label, w, 0), w


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[2000, 10000, 25000])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    thetas = [0.8, 0.85, 0.9]
    print(f"available backends: {', '.join(kernels.AVAILABLE)}")
    print(f"{'n':>8} {'backend':>8} {'seconds':>10} {'speedup':>8}")
    for n in args.n:
        data = make_scores(n, args.seed)
        timings = {}
        outputs = {}
        for backend in kernels.AVAILABLE:
            timings[backend] = best_of(
                lambda b=backend: outputs.__setitem__(b, kernels.sweep_two_stage(*data, thetas, backend=b)),
                args.repeat,
            )
        # the comparison is meaningless if the answers differ
        if len(outputs) == 2:
            for x, y in zip(outputs["cython"], outputs["python"]):
                np.testing.assert_array_equal(x, y)
        ref = timings["python"]
        for backend, secs in timings.items():
            print(f"{n:>8} {backend:>8} {secs:>10.4f} {ref / secs:>7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

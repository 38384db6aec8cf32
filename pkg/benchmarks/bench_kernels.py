"""Micro-benchmark: compiled kernels vs the pure-numpy reference.

Run:  python benchmarks/bench_kernels.py
"""

from __future__ import annotations

import time

import numpy as np

from promptcount._kernels import BACKEND, _ref


def _boxes(rng: np.random.Generator, n: int, side: float = 512.0) -> np.ndarray:
    x0 = rng.uniform(0, side - 8, n)
    y0 = rng.uniform(0, side - 8, n)
    w = rng.uniform(2, 40, n)
    h = rng.uniform(2, 40, n)
    return np.stack([x0, y0, x0 + w, y0 + h], axis=1)


def _time(fn, *args, repeat: int = 5) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    if BACKEND != "cython":
        print("compiled backend unavailable; timing numpy against itself")
        compiled = _ref
    else:
        from promptcount._kernels import _core as compiled

    rng = np.random.default_rng(0)
    print(f"active backend: {BACKEND}")
    print(f"{'kernel':<16}{'size':<14}{'numpy (ms)':>12}{'compiled (ms)':>15}{'speedup':>9}")

    for n, m in [(200, 200), (1000, 1000), (3000, 1000)]:
        a, b = _boxes(rng, n), _boxes(rng, m)
        t_ref = _time(_ref.pairwise_iou, a, b)
        t_core = _time(compiled.pairwise_iou, a, b)
        print(f"{'pairwise_iou':<16}{f'{n}x{m}':<14}{t_ref * 1e3:>12.2f}{t_core * 1e3:>15.2f}"
              f"{t_ref / t_core:>9.1f}x")

    for n, m in [(500, 50), (2000, 100)]:
        neg, pos = _boxes(rng, n), _boxes(rng, m)
        t_ref = _time(_ref.dedup_keep, neg, pos, 0.5)
        t_core = _time(compiled.dedup_keep, neg, pos, 0.5)
        print(f"{'dedup_keep':<16}{f'{n} vs {m}':<14}{t_ref * 1e3:>12.2f}{t_core * 1e3:>15.2f}"
              f"{t_ref / t_core:>9.1f}x")

    for n_pts, side in [(50, 64), (500, 256), (2000, 512)]:
        pts = rng.uniform(1, side - 1, (n_pts, 2))
        t_ref = _time(_ref.gaussian_splat, pts, side, side, 4.0, 1.0, 4.0)
        t_core = _time(compiled.gaussian_splat, pts, side, side, 4.0, 1.0, 4.0)
        print(f"{'gaussian_splat':<16}{f'{n_pts}@{side}':<14}{t_ref * 1e3:>12.2f}"
              f"{t_core * 1e3:>15.2f}{t_ref / t_core:>9.1f}x")


if __name__ == "__main__":
    main()

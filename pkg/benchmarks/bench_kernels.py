"""Benchmark the jitted kernels against the pure-numpy fallbacks.

Runs both implementations of floyd_warshall and bfs_distance_field on the
same inputs, checks the outputs are bitwise identical, and reports timings.
The selection normally happens once at import time (SORB_NO_NUMBA); here the
private implementations are driven directly so one process covers both paths.

Usage: python3 benchmarks/bench_kernels.py [--sizes 100,250,500]
"""

import argparse
import time

import numpy as np

from sorb import kernels
from sorb.gridworld import builtin_map


def time_call(func, *args, n_runs=5):
    best = float("inf")
    out = None
    for _ in range(n_runs):
        t0 = time.perf_counter()
        out = func(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_floyd_warshall(n, rng):
    w = rng.uniform(0.5, 5.0, size=(n, n))
    w[rng.random((n, n)) < 0.6] = np.inf  # sparse-ish graph
    np.fill_diagonal(w, 0.0)

    def run(impl):
        dist = w.copy()
        succ = np.full((n, n), -1, dtype=np.int32)
        jj = np.arange(n, dtype=np.int32)
        finite = np.isfinite(dist)
        succ[finite] = np.broadcast_to(jj, (n, n))[finite]
        np.fill_diagonal(succ, jj)
        impl(dist, succ)
        return dist, succ

    t_np, (d_np, s_np) = time_call(lambda: run(kernels._floyd_warshall_numpy))
    if not kernels.NUMBA_AVAILABLE:
        return t_np, None
    run(kernels._floyd_warshall_numba)  # compile outside the timer
    t_nb, (d_nb, s_nb) = time_call(lambda: run(kernels._floyd_warshall_numba))
    assert np.array_equal(d_np, d_nb), "floyd_warshall paths disagree"
    assert np.array_equal(s_np, s_nb), "successor matrices disagree"
    return t_np, t_nb


def bench_bfs(map_name):
    grid = builtin_map(map_name)
    walls = grid.occupancy
    sx, sy = (int(v) for v in grid.free_cells[0])

    def sweep(impl):
        total = 0
        for x, y in grid.free_cells:
            total += int(impl(walls, int(x), int(y))[sy, sx])
        return total

    t_np, chk_np = time_call(lambda: sweep(kernels._bfs_field_numpy), n_runs=3)
    if not kernels.NUMBA_AVAILABLE:
        return t_np, None
    kernels._bfs_field_numba(walls, sx, sy)  # compile outside the timer
    t_nb, chk_nb = time_call(lambda: sweep(kernels._bfs_field_numba), n_runs=3)
    assert chk_np == chk_nb, "bfs fields disagree"
    return t_np, t_nb


def report(label, t_np, t_nb):
    if t_nb is None:
        print(f"{label:<38} numpy {t_np * 1e3:8.2f} ms   (numba unavailable)")
    else:
        print(
            f"{label:<38} numpy {t_np * 1e3:8.2f} ms   "
            f"numba {t_nb * 1e3:8.2f} ms   x{t_np / t_nb:5.1f}"
        )


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="100,250,500",
                    help="comma-separated floyd_warshall node counts")
    args = ap.parse_args()

    print(f"numba available: {kernels.NUMBA_AVAILABLE}")
    rng = np.random.default_rng(0)
    for n in (int(s) for s in args.sizes.split(",")):
        report(f"floyd_warshall n={n}", *bench_floyd_warshall(n, rng))
    for name in ("four_rooms", "large_four_rooms"):
        report(f"bfs_distance_field sweep {name}", *bench_bfs(name))


if __name__ == "__main__":
    main()

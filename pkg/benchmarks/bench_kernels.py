"""Numba vs pure-numpy timings for the non-differentiable kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both paths are called directly, so the TRANSHUMAN_NUMBA flag does not matter
here. Each row also checks that the two paths agree exactly.
"""
import argparse
import time

import numpy as np

from transhuman import _kernels as K


def best_of(fn, repeat):
    fn()  # warm-up (includes numba compilation on first call)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    verts = rng.normal(size=(1500, 3)) * [0.2, 0.5, 0.1]
    pts = rng.normal(size=(4096 * 64, 3)) * [0.3, 0.6, 0.3]
    origins = verts[rng.choice(len(verts), 65, replace=False)]
    queries = pts[:60_000]
    centers = verts[:65]
    yield ("knn_select k=7 (60k pts, 65 fields)",
           lambda: K._knn_select_nb(queries, origins, 7), lambda: K.knn_select_np(queries, origins, 7))
    yield ("within_distance grid (262k pts, 1500 verts)",
           lambda: K._within_grid_nb(pts, verts, 0.1), lambda: K.within_np(pts, verts, 0.1))
    yield ("within_distance brute (262k pts, 1500 verts)",
           lambda: K._within_brute_nb(pts, verts, 0.1), lambda: K.within_np(pts, verts, 0.1))
    yield ("nearest_assign (1500 pts, 65 centres)",
           lambda: K._nearest_assign_nb(verts, centers), lambda: K.nearest_assign_np(verts, centers))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if K.numba is None:
        raise SystemExit("numba is not installed")
    print(f"{'kernel':48s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}  equal")
    for name, nb, npy in cases(np.random.default_rng(args.seed)):
        same = np.array_equal(nb(), npy())
        t_nb, t_np = best_of(nb, args.repeat), best_of(npy, args.repeat)
        print(f"{name:48s} {1e3 * t_nb:10.2f} {1e3 * t_np:10.2f} {t_np / t_nb:8.1f}x  {same}")


if __name__ == "__main__":
    main()

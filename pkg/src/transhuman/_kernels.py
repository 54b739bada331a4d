"""Non-differentiable hot loops with a numba path and a pure-numpy path.

The numba versions are used unless ``TRANSHUMAN_NUMBA=0`` is set in the
environment (or numba is missing). Both paths compute squared distances as
``dx*dx + dy*dy + dz*dz`` in that order so their outputs match bit for bit.
"""
from __future__ import annotations

import os

import numpy as np

try:
    import numba
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and os.environ.get("TRANSHUMAN_NUMBA", "1").lower() not in ("0", "false", "no")

_CHUNK = 4096


# -- numpy implementations --------------------------------------------------
def _sqdist_np(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    dx = a[:, None, 0] - b[None, :, 0]
    dy = a[:, None, 1] - b[None, :, 1]
    dz = a[:, None, 2] - b[None, :, 2]
    return dx * dx + dy * dy + dz * dz


def knn_select_np(points: np.ndarray, origins: np.ndarray, k: int) -> np.ndarray:
    out = np.empty((len(points), k), dtype=np.int64)
    for s in range(0, len(points), _CHUNK):
        d2 = _sqdist_np(points[s : s + _CHUNK], origins)
        out[s : s + _CHUNK] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return out


def within_np(points: np.ndarray, verts: np.ndarray, threshold: float) -> np.ndarray:
    t2 = threshold * threshold
    out = np.empty(len(points), dtype=bool)
    for s in range(0, len(points), _CHUNK):
        out[s : s + _CHUNK] = (_sqdist_np(points[s : s + _CHUNK], verts) < t2).any(axis=1)
    return out


def nearest_assign_np(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    out = np.empty(len(x), dtype=np.int64)
    for s in range(0, len(x), _CHUNK):
        out[s : s + _CHUNK] = np.argmin(_sqdist_np(x[s : s + _CHUNK], centers), axis=1)
    return out


def ray_capsules_np(origins, dirs, cap_a, cap_b, radii):
    """First hit of each ray against a set of capsules: (t, capsule id) with t=inf, id=-1 on miss."""
    n = len(origins)
    best_t = np.full(n, np.inf)
    best_id = np.full(n, -1, dtype=np.int64)
    for c in range(len(radii)):
        t = _capsule_hit_np(origins, dirs, cap_a[c], cap_b[c], radii[c])
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_id = np.where(closer, c, best_id)
    return best_t, best_id


def _sphere_hit_np(o, d, center, r):
    oc = o - center
    b = (oc * d).sum(axis=1)
    c = (oc * oc).sum(axis=1) - r * r
    disc = b * b - c
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t0 = -b - sq
    t1 = -b + sq
    t = np.where(t0 > 1e-9, t0, np.where(t1 > 1e-9, t1, np.inf))
    return np.where(ok, t, np.inf)


def _capsule_hit_np(o, d, a, b, r):
    ba = b - a
    baba = float(ba @ ba)
    if baba < 1e-18:
        return _sphere_hit_np(o, d, a, r)
    oa = o - a
    bard = d @ ba
    baoa = oa @ ba
    rdoa = (d * oa).sum(axis=1)
    oaoa = (oa * oa).sum(axis=1)
    qa = baba - bard * bard
    qb = baba * rdoa - baoa * bard
    qc = baba * oaoa - baoa * baoa - r * r * baba
    disc = qb * qb - qa * qc
    t_cyl = np.full(len(o), np.inf)
    ok = (disc >= 0) & (np.abs(qa) > 1e-18)
    with np.errstate(divide="ignore", invalid="ignore"):
        for sign in (-1.0, 1.0):
            t = (-qb + sign * np.sqrt(np.where(ok, disc, 0.0))) / np.where(ok, qa, 1.0)
            y = baoa + t * bard
            good = ok & (t > 1e-9) & (y > 0) & (y < baba) & (t < t_cyl)
            t_cyl = np.where(good, t, t_cyl)
    ts = np.minimum(_sphere_hit_np(o, d, a, r), _sphere_hit_np(o, d, b, r))
    return np.minimum(t_cyl, ts)


# -- numba implementations ---------------------------------------------------
if numba is not None:

    @njit(cache=True)
    def _knn_select_nb(points, origins, k):
        n = points.shape[0]
        m = origins.shape[0]
        out = np.empty((n, k), dtype=np.int64)
        best_d = np.empty(k)
        best_i = np.empty(k, dtype=np.int64)
        for p in range(n):
            cnt = 0
            for i in range(m):
                dx = points[p, 0] - origins[i, 0]
                dy = points[p, 1] - origins[i, 1]
                dz = points[p, 2] - origins[i, 2]
                d2 = dx * dx + dy * dy + dz * dz
                if cnt == k and d2 >= best_d[k - 1]:
                    continue
                j = cnt if cnt < k else k - 1
                while j > 0 and best_d[j - 1] > d2:
                    if j < k:
                        best_d[j] = best_d[j - 1]
                        best_i[j] = best_i[j - 1]
                    j -= 1
                best_d[j] = d2
                best_i[j] = i
                if cnt < k:
                    cnt += 1
            for j in range(k):
                out[p, j] = best_i[j]
        return out

    @njit(cache=True)
    def _within_brute_nb(points, verts, threshold):
        t2 = threshold * threshold
        out = np.zeros(points.shape[0], dtype=np.bool_)
        for p in range(points.shape[0]):
            for v in range(verts.shape[0]):
                dx = points[p, 0] - verts[v, 0]
                dy = points[p, 1] - verts[v, 1]
                dz = points[p, 2] - verts[v, 2]
                if dx * dx + dy * dy + dz * dz < t2:
                    out[p] = True
                    break
        return out

    @njit(cache=True)
    def _within_grid_nb(points, verts, threshold):
        t2 = threshold * threshold
        nv = verts.shape[0]
        lo = np.empty(3)
        for a in range(3):
            lo[a] = verts[:, a].min()
        cells = np.empty((nv, 3), dtype=np.int64)
        dims = np.zeros(3, dtype=np.int64)
        for v in range(nv):
            for a in range(3):
                c = np.int64(np.floor((verts[v, a] - lo[a]) / threshold))
                cells[v, a] = c
                if c + 1 > dims[a]:
                    dims[a] = c + 1
        keys = (cells[:, 0] * dims[1] + cells[:, 1]) * dims[2] + cells[:, 2]
        order = np.argsort(keys, kind="mergesort")
        skeys = keys[order]
        out = np.zeros(points.shape[0], dtype=np.bool_)
        pc = np.empty(3, dtype=np.int64)
        for p in range(points.shape[0]):
            for a in range(3):
                pc[a] = np.int64(np.floor((points[p, a] - lo[a]) / threshold))
            found = False
            for ox in range(-1, 2):
                cx = pc[0] + ox
                if cx < 0 or cx >= dims[0] or found:
                    continue
                for oy in range(-1, 2):
                    cy = pc[1] + oy
                    if cy < 0 or cy >= dims[1] or found:
                        continue
                    for oz in range(-1, 2):
                        cz = pc[2] + oz
                        if cz < 0 or cz >= dims[2] or found:
                            continue
                        key = (cx * dims[1] + cy) * dims[2] + cz
                        s = np.searchsorted(skeys, key)
                        while s < nv and skeys[s] == key:
                            v = order[s]
                            dx = points[p, 0] - verts[v, 0]
                            dy = points[p, 1] - verts[v, 1]
                            dz = points[p, 2] - verts[v, 2]
                            if dx * dx + dy * dy + dz * dz < t2:
                                found = True
                                break
                            s += 1
            out[p] = found
        return out

    @njit(cache=True)
    def _nearest_assign_nb(x, centers):
        out = np.empty(x.shape[0], dtype=np.int64)
        for p in range(x.shape[0]):
            best = np.inf
            bi = 0
            for c in range(centers.shape[0]):
                dx = x[p, 0] - centers[c, 0]
                dy = x[p, 1] - centers[c, 1]
                dz = x[p, 2] - centers[c, 2]
                d2 = dx * dx + dy * dy + dz * dz
                if d2 < best:
                    best = d2
                    bi = c
            out[p] = bi
        return out


def knn_select(points: np.ndarray, origins: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest origins per point, ascending distance, ties to lower index."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    if not 1 <= k <= len(origins):
        raise ValueError(f"k={k} outside [1, {len(origins)}]")
    if USE_NUMBA:
        return _knn_select_nb(points, origins, k)
    return knn_select_np(points, origins, k)


def within_distance(points: np.ndarray, verts: np.ndarray, threshold: float, method: str = "grid") -> np.ndarray:
    """Mask of points whose nearest vertex is strictly closer than ``threshold``."""
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    verts = np.ascontiguousarray(verts, dtype=np.float64)
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if len(points) == 0 or len(verts) == 0:
        return np.zeros(len(points), dtype=bool)
    if method not in ("grid", "brute"):
        raise ValueError(f"unknown method {method!r}")
    if USE_NUMBA:
        fn = _within_grid_nb if method == "grid" else _within_brute_nb
        return fn(points, verts, float(threshold))
    # the numpy path has no grid variant; the brute scan returns the same mask
    return within_np(points, verts, threshold)


def nearest_assign(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    if USE_NUMBA:
        return _nearest_assign_nb(x, centers)
    return nearest_assign_np(x, centers)


THREADS = 1


def set_threads(n: int) -> None:
    """Record the thread budget. The kernels are serial loops, so only BLAS
    (limited by the caller) actually uses threads."""
    global THREADS
    if n < 1:
        raise ValueError("threads must be >= 1")
    THREADS = int(n)

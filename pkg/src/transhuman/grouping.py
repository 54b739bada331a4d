"""Canonical body grouping: k-means / grid partitions of the vertices and the
per-cluster mean pooling that turns per-vertex arrays into per-token arrays."""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .diffcore.functional import sparse_matmul
from .diffcore.tensor import ShapeError, Tensor

MAX_ITERS = 100


@dataclass
class GroupingDictionary:
    clusters: list[np.ndarray]
    centroids: np.ndarray
    seed: int | None = None
    method: str = "kmeans"

    def __post_init__(self):
        self.clusters = [np.asarray(c, dtype=np.int64) for c in self.clusters]
        self.centroids = np.asarray(self.centroids, dtype=np.float64).reshape(-1, 3)

    @property
    def n_tokens(self) -> int:
        return len(self.clusters)

    @cached_property
    def n_vertices(self) -> int:
        return int(sum(len(c) for c in self.clusters))

    @cached_property
    def labels(self) -> np.ndarray:
        lab = np.full(self.n_vertices, -1, dtype=np.int64)
        for i, c in enumerate(self.clusters):
            lab[c] = i
        return lab

    @cached_property
    def pool_matrix(self) -> sp.csr_matrix:
        rows = np.concatenate([np.full(len(c), i) for i, c in enumerate(self.clusters)])
        cols = np.concatenate(self.clusters)
        vals = np.concatenate([np.full(len(c), 1.0 / len(c)) for c in self.clusters])
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n_tokens, self.n_vertices))

    def sizes(self) -> np.ndarray:
        return np.array([len(c) for c in self.clusters])

    def to_dict(self) -> dict:
        return {
            "method": self.method, "seed": self.seed, "n_tokens": self.n_tokens,
            "clusters": [c.tolist() for c in self.clusters], "centroids": self.centroids.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroupingDictionary":
        out = cls(d["clusters"], d["centroids"], d.get("seed"), d.get("method", "kmeans"))
        if out.n_tokens != d.get("n_tokens", out.n_tokens):
            raise ValueError("grouping file: n_tokens does not match the cluster list")
        check_partition(out, out.n_vertices)
        return out


def check_partition(d: GroupingDictionary, n_vertices: int) -> None:
    allidx = np.concatenate(d.clusters) if d.clusters else np.empty(0, np.int64)
    if any(len(c) == 0 for c in d.clusters):
        raise ValueError("empty cluster")
    if len(allidx) != n_vertices or not np.array_equal(np.sort(allidx), np.arange(n_vertices)):
        raise ValueError("clusters do not partition the vertex set")


def default_token_count(n_vertices: int, base: int = 300) -> int:
    """Token count scaled from the 6890-vertex configuration."""
    return max(8, round(base * n_vertices / 6890))


def kmeans_plus_plus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    idx = [int(rng.integers(len(x)))]
    d2 = ((x - x[idx[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            choice = int(rng.integers(len(x)))
        else:
            choice = int(np.searchsorted(np.cumsum(d2), rng.uniform(0, total), side="right"))
            choice = min(choice, len(x) - 1)
        idx.append(choice)
        d2 = np.minimum(d2, ((x - x[choice]) ** 2).sum(axis=1))
    return x[idx].copy()


def _repair_empty(x, labels, centers, k):
    """Move the farthest member of the largest cluster into each empty cluster."""
    counts = np.bincount(labels, minlength=k)
    for e in np.flatnonzero(counts == 0):
        big = int(np.argmax(counts))
        members = np.flatnonzero(labels == big)
        far = members[np.argmax(((x[members] - centers[big]) ** 2).sum(axis=1))]
        labels[far] = e
        centers[e] = x[far]
        counts[big] -= 1
        counts[e] = 1
    return labels


def kmeans_group(vertices: np.ndarray, n_tokens: int, seed: int = 0) -> GroupingDictionary:
    """Lloyd's k-means with k-means++ seeding over canonical coordinates."""
    x = np.asarray(vertices, dtype=np.float64)
    n = len(x)
    if not 1 <= n_tokens <= n:
        raise ValueError(f"n_tokens={n_tokens} must be in [1, {n}]")
    rng = np.random.default_rng(seed)
    centers = kmeans_plus_plus(x, n_tokens, rng)
    labels = None
    for _ in range(MAX_ITERS):
        new = _kernels.nearest_assign(x, centers)
        new = _repair_empty(x, new, centers, n_tokens)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        counts = np.bincount(labels, minlength=n_tokens)
        for a in range(3):
            centers[:, a] = np.bincount(labels, weights=x[:, a], minlength=n_tokens) / counts
    clusters = [np.flatnonzero(labels == i) for i in range(n_tokens)]
    # report centroids as exact member means so pooling V^c reproduces them
    cents = np.array([x[c].mean(axis=0) for c in clusters])
    return GroupingDictionary(clusters, cents, seed, "kmeans")


def grid_voxelize_group(vertices: np.ndarray, cell_size: float) -> GroupingDictionary:
    """One cluster per occupied cell of a uniform grid, in ascending cell order."""
    if cell_size <= 0:
        raise ValueError("cell_size must be positive")
    x = np.asarray(vertices, dtype=np.float64)
    cells = np.floor(x / cell_size).astype(np.int64)
    _, labels = np.unique(cells, axis=0, return_inverse=True)
    labels = labels.reshape(-1)
    k = int(labels.max()) + 1
    clusters = [np.flatnonzero(labels == i) for i in range(k)]
    cents = np.array([x[c].mean(axis=0) for c in clusters])
    return GroupingDictionary(clusters, cents, None, "grid")


def grid_cell_for_count(vertices: np.ndarray, n_tokens: int, iters: int = 40) -> float:
    """Cell size whose grid occupancy is closest to ``n_tokens`` (bisection on log scale)."""
    x = np.asarray(vertices, dtype=np.float64)
    extent = float((x.max(axis=0) - x.min(axis=0)).max())
    lo, hi = extent * 1e-3, extent * 2
    best = (np.inf, hi)
    for _ in range(iters):
        mid = np.sqrt(lo * hi)
        count = len(np.unique(np.floor(x / mid).astype(np.int64), axis=0))
        best = min(best, (abs(count - n_tokens), mid))
        if count > n_tokens:
            lo = mid
        else:
            hi = mid
    return float(best[1])


def aggregate(values, grouping: GroupingDictionary):
    """Per-cluster mean along the leading extent; tensors stay on the tape."""
    shape = values.shape
    if shape[0] != grouping.n_vertices:
        raise ShapeError(f"aggregate: leading extent {shape[0]} != {grouping.n_vertices} vertices")
    if isinstance(values, Tensor):
        return sparse_matmul(grouping.pool_matrix, values)
    flat = np.asarray(values, dtype=np.float64).reshape(shape[0], -1)
    return np.asarray(grouping.pool_matrix @ flat).reshape((grouping.n_tokens,) + tuple(shape[1:]))


def save_grouping(grouping: GroupingDictionary, path) -> None:
    Path(path).write_text(json.dumps(grouping.to_dict()) + "\n", encoding="utf-8")


def load_grouping(path) -> GroupingDictionary:
    return GroupingDictionary.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

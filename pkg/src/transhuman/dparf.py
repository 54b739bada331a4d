"""Deformable partial radiance fields.

Each token owns a local frame centred at its observation-space origin and
rotated by the token's averaged joint rotation. Query points are expressed
in the frames of their nearest tokens and blended with distance weights.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .diffcore import tensor as T
from .diffcore.tensor import Tensor
from .transhe import positional_encoding

COORD_MODES = ("deformed", "absolute", "none")


def orthonormalize(m: np.ndarray) -> np.ndarray:
    """Nearest rotation(s) in Frobenius norm to (..., 3, 3) matrices."""
    m = np.asarray(m, dtype=np.float64)
    u, s, vt = np.linalg.svd(m)
    if (s[..., -1] <= 1e-12 * np.maximum(s[..., 0], 1e-300)).any():
        raise np.linalg.LinAlgError("orthonormalize: singular matrix")
    d = np.sign(np.linalg.det(u @ vt))
    u = u.copy()
    u[..., :, -1] *= d[..., None]
    return u @ vt


@dataclass
class PartialFieldSet:
    origins: np.ndarray          # (N_t, 3) observation-space token positions
    frames: np.ndarray           # (N_t, 3, 3) deformed frames W^o
    token_rotations: np.ndarray  # (N_t, 3, 3) orthonormalized averaged rotations
    features: Tensor | None      # (N_t, d1) or (N_v, N_t, d1)
    canonical_frames: np.ndarray | None = None

    @property
    def n_fields(self) -> int:
        return len(self.origins)


def build_fields(features, origins: np.ndarray, raw_rotations: np.ndarray,
                 canonical_frames: np.ndarray | None = None) -> PartialFieldSet:
    rot = orthonormalize(raw_rotations)
    frames = rot if canonical_frames is None else rot @ canonical_frames
    feats = None if features is None else T.as_tensor(features)
    return PartialFieldSet(np.asarray(origins, dtype=np.float64), frames, rot, feats, canonical_frames)


def local_coord(points, fields: PartialFieldSet, index: np.ndarray, convention: str = "inverse"):
    """Coordinates of points (P, 3) in the frames ``index`` (P, K) -> (P, K, 3).

    ``inverse`` applies W^T (p - origin); ``literal`` applies W (p - origin).
    """
    frames = fields.frames[index]
    if convention == "literal":
        frames = np.swapaxes(frames, -1, -2)
    elif convention != "inverse":
        raise ValueError(f"unknown frame convention {convention!r}")
    origins = fields.origins[index]
    if isinstance(points, Tensor):
        diff = T.reshape(points, (points.shape[0], 1, 1, 3)) - origins[:, :, None, :]
        return T.reshape(diff @ frames, index.shape + (3,))
    diff = np.asarray(points, dtype=np.float64)[:, None, :] - origins
    return np.einsum("pkj,pkji->pki", diff, frames)


def k_nearest_fields(points, fields: PartialFieldSet, k: int) -> np.ndarray:
    pts = points.data if isinstance(points, Tensor) else np.asarray(points, dtype=np.float64)
    if not 1 <= k <= fields.n_fields:
        raise ValueError(f"N_k={k} must be in [1, {fields.n_fields}]")
    return _kernels.knn_select(pts.reshape(-1, 3), fields.origins, k)


def field_weights(points, origins: np.ndarray, index: np.ndarray):
    """Softmax over -d_i / sum_j d_j for the selected fields; (P, K)."""
    if isinstance(points, Tensor):
        diff = T.reshape(points, (points.shape[0], 1, 3)) - origins[index]
        d = T.sqrt(T.sum_(diff * diff, axis=-1) + 1e-300)
        total = T.sum_(d, axis=-1, keepdims=True)
        safe = total + (total.data <= 0).astype(np.float64)
        return T.softmax(-(d / safe), axis=-1)
    diff = np.asarray(points, dtype=np.float64)[:, None, :] - origins[index]
    d = np.sqrt((diff * diff).sum(axis=-1))
    total = d.sum(axis=-1, keepdims=True)
    arg = -d / np.where(total > 0, total, 1.0)
    e = np.exp(arg - arg.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def aggregate_representation(points, fields: PartialFieldSet, k: int, n_freqs: int,
                             coord_mode: str = "deformed", convention: str = "inverse",
                             index: np.ndarray | None = None):
    """Blended human representation h = sum_i w_i [F'_i ; gamma(p_i)].

    Token features with a leading view axis give an (N_v, P, d2) result,
    otherwise (P, d2).
    """
    if coord_mode not in COORD_MODES:
        raise ValueError(f"unknown coordinate mode {coord_mode!r}")
    if index is None:
        index = k_nearest_fields(points, fields, k)
    p = points if isinstance(points, Tensor) else np.asarray(points, dtype=np.float64)
    w = field_weights(p, fields.origins, index)
    n = len(index)
    dense = T.scatter_rows(w, index, fields.n_fields)
    feat = dense @ fields.features

    if coord_mode == "deformed":
        local = local_coord(p, fields, index, convention)
        enc = positional_encoding(local, n_freqs)
        coord = T.sum_(T.reshape(w, (n, index.shape[1], 1)) * enc, axis=1)
    elif coord_mode == "absolute":
        # weights sum to one, so blending gamma(p) gives gamma(p) itself
        coord = T.as_tensor(positional_encoding(p, n_freqs))
    else:
        coord = T.as_tensor(np.zeros((n, 6 * n_freqs)))
    if feat.ndim == 3:
        coord = coord + np.zeros((feat.shape[0], 1, 1))
    return T.concat([feat, coord], axis=-1)

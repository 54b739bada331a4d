"""Transformer-based human encoding: paint image features onto the posed
body, pool them into canonical tokens and mix the tokens globally."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Camera, image_to_grid, project
from .diffcore import tensor as T
from .diffcore.functional import bilinear_sample
from .diffcore.nn import Linear, NetworkConfig, ParamStore, Transformer
from .diffcore.tensor import Tensor
from .grouping import GroupingDictionary, aggregate


def positional_encoding(x, n_freqs: int):
    """Sinusoidal features of (..., 3) coordinates -> (..., 6 * n_freqs).

    Layout per frequency k: [sin(2^k pi x, y, z), cos(2^k pi x, y, z)].
    Accepts arrays or tensors; tensors stay differentiable.
    """
    freqs = (2.0 ** np.arange(n_freqs)) * np.pi
    if isinstance(x, Tensor):
        scaled = T.reshape(x, x.shape[:-1] + (1, 3)) * freqs[:, None]
        out = T.stack([T.sin(scaled), T.cos(scaled)], axis=-2)
        return T.reshape(out, x.shape[:-1] + (6 * n_freqs,))
    x = np.asarray(x, dtype=np.float64)
    scaled = x[..., None, :] * freqs[:, None]
    out = np.stack([np.sin(scaled), np.cos(scaled)], axis=-2)
    return out.reshape(x.shape[:-1] + (6 * n_freqs,))


@dataclass
class PaintedBody:
    features: Tensor
    valid: np.ndarray


@dataclass
class TokenSet:
    features: Tensor
    canonical_positions: np.ndarray
    observation_positions: np.ndarray


def visible_vertices(verts: np.ndarray, normals: np.ndarray, cam: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Projected pixels and a mask of vertices in front of, inside, and facing the camera."""
    pix, depth = project(cam, verts)
    inside = (depth > 0) & (pix[:, 0] >= 0) & (pix[:, 0] < cam.width) & (pix[:, 1] >= 0) & (pix[:, 1] < cam.height)
    facing = ((verts - cam.center) * normals).sum(axis=1) < 0
    return pix, inside & facing


def paint(verts: np.ndarray, featmap, cam: Camera, normals: np.ndarray, factor: float = 8.0) -> PaintedBody:
    """Sample an (H', W', d1) feature map at each vertex's projection.

    Invalid vertices (behind, outside or back-facing) get zero features.
    """
    pix, valid = visible_vertices(verts, normals, cam)
    grid = image_to_grid(np.where(valid[:, None], pix, 0.0), factor)
    feats = bilinear_sample(featmap, grid) * valid[:, None].astype(np.float64)
    return PaintedBody(feats, valid)


def make_tokens(painted: PaintedBody, grouping: GroupingDictionary, canonical_vertices, observation_vertices) -> TokenSet:
    return TokenSet(
        aggregate(painted.features, grouping),
        aggregate(canonical_vertices, grouping),
        aggregate(observation_vertices, grouping),
    )


class TokenEncoder:
    """Additive projected positional encoding followed by a pre-norm transformer."""

    def __init__(self, store: ParamStore, cfg: NetworkConfig, name: str = "transhe"):
        self.n_freqs = cfg.L1
        self.pe_proj = Linear(store, f"{name}.pe_proj", 6 * cfg.L1, cfg.d1)
        self.transformer = Transformer(store, f"{name}.transformer", cfg.d1, cfg.depth, cfg.heads, cfg.mlp_ratio)

    def __call__(self, features, positions: np.ndarray):
        pe = self.pe_proj(positional_encoding(np.asarray(positions), self.n_freqs))
        return self.transformer(T.as_tensor(features) + pe)

    def encode_tokens(self, tokens: TokenSet, use_observation_pe: bool = False):
        pos = tokens.observation_positions if use_observation_pe else tokens.canonical_positions
        return self(tokens.features, pos)

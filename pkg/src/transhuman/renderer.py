"""Density/colour heads, ray sampling, volume compositing and the
progressive (body-prior) point filter."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .camera import ray_box
from .diffcore import tensor as T
from .diffcore.nn import MLP, NetworkConfig, ParamStore
from .transhe import positional_encoding


class RadianceHeads:
    """sigma = softplus(MLP_sigma(f)); c = sigmoid(MLP_c([f, gamma(d)]))."""

    def __init__(self, store: ParamStore, cfg: NetworkConfig, name: str = "heads"):
        w = cfg.head_width
        self.n_freqs = cfg.L3
        self.sigma = MLP(store, f"{name}.sigma", [cfg.d2, w, w, 1])
        self.color = MLP(store, f"{name}.color", [cfg.d2 + 6 * cfg.L3, w, 3])

    def density(self, f):
        return T.reshape(T.softplus(self.sigma(f)), (f.shape[0],))

    def colour(self, f, dirs: np.ndarray):
        enc = positional_encoding(np.asarray(dirs, dtype=np.float64), self.n_freqs)
        return T.sigmoid(self.color(T.concat([f, T.as_tensor(enc)], axis=-1)))

    def predict(self, f, dirs: np.ndarray):
        f = T.as_tensor(f)
        return self.density(f), self.colour(f, dirs)


@dataclass
class RaySampleBatch:
    depths: np.ndarray   # (R, N_s)
    deltas: np.ndarray   # (R, N_s)
    points: np.ndarray   # (R, N_s, 3)


@dataclass
class RenderOutput:
    color: object        # (R, 3) tensor or array
    opacity: object      # (R,)
    depth: object        # (R,)
    weights: object = None


@dataclass
class EvalCounter:
    density_evals: int = 0
    color_evals: int = 0
    points_sampled: int = 0

    def __iadd__(self, other: "EvalCounter"):
        self.density_evals += other.density_evals
        self.color_evals += other.color_evals
        self.points_sampled += other.points_sampled
        return self


def sample_depths(near, far, n_samples: int, stratified: bool = False, rng: np.random.Generator | None = None):
    """Bin depths over [near, far]: midpoints, or one uniform draw per bin."""
    if n_samples < 1:
        raise ValueError("need at least one sample per ray")
    near = np.atleast_1d(np.asarray(near, dtype=np.float64))
    far = np.atleast_1d(np.asarray(far, dtype=np.float64))
    width = (far - near) / n_samples
    if stratified:
        rng = rng or np.random.default_rng()
        u = rng.uniform(size=(len(near), n_samples))
    else:
        u = np.full((len(near), n_samples), 0.5)
    z = near[:, None] + (np.arange(n_samples)[None] + u) * width[:, None]
    delta = np.empty_like(z)
    delta[:, :-1] = np.diff(z, axis=1)
    delta[:, -1] = width
    return z, delta


def sample_ray(origins, dirs, near, far, n_samples: int, stratified: bool = False, rng=None) -> RaySampleBatch:
    z, delta = sample_depths(near, far, n_samples, stratified, rng)
    pts = np.asarray(origins)[:, None, :] + z[..., None] * np.asarray(dirs)[:, None, :]
    return RaySampleBatch(z, delta, pts)


def composite(sigma, color, delta, depths=None) -> RenderOutput:
    """Discrete volume rendering along the last sample axis.

    alpha_k = 1 - exp(-sigma_k delta_k), T_k = exp(-sum_{j<k} sigma_j delta_j),
    C = sum_k T_k alpha_k c_k. Opacity is the telescoped sum 1 - T_{N+1}, which
    stays inside [0, 1] in floating point. Works on tensors or arrays.
    """
    if isinstance(sigma, T.Tensor) or isinstance(color, T.Tensor):
        tau = T.as_tensor(sigma) * delta
        before = T.cumsum(tau, axis=-1) - tau
        trans = T.exp(-before)
        alpha = 1.0 - T.exp(-tau)
        w = trans * alpha
        col = T.sum_(T.reshape(w, w.shape + (1,)) * color, axis=-2)
        opacity = 1.0 - T.exp(-T.sum_(tau, axis=-1))
        depth = T.sum_(w * depths, axis=-1) if depths is not None else None
        return RenderOutput(col, opacity, depth, w)
    sigma = np.asarray(sigma, dtype=np.float64)
    tau = sigma * delta
    trans = np.exp(-(np.cumsum(tau, axis=-1) - tau))
    w = trans * (1.0 - np.exp(-tau))
    col = (w[..., None] * np.asarray(color)).sum(axis=-2)
    depth = (w * depths).sum(axis=-1) if depths is not None else None
    return RenderOutput(col, 1.0 - np.exp(-tau.sum(axis=-1)), depth, w)


def transmittance(sigma: np.ndarray, delta: np.ndarray) -> np.ndarray:
    tau = np.asarray(sigma) * delta
    return np.exp(-(np.cumsum(tau, axis=-1) - tau))


def progressive_filter(points: np.ndarray, verts: np.ndarray, threshold: float = 0.1, method: str = "grid") -> np.ndarray:
    """Keep points strictly closer than ``threshold`` to some posed vertex."""
    shape = np.asarray(points).shape[:-1]
    return _kernels.within_distance(points, verts, threshold, method).reshape(shape)


def body_ray_bounds(origins, dirs, verts: np.ndarray, padding: float = 0.2):
    """Near/far of each ray against the body's bounding box dilated by ``padding``."""
    lo = verts.min(axis=0) - padding
    hi = verts.max(axis=0) + padding
    return ray_box(origins, dirs, lo, hi)

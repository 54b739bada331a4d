"""Fine-grained detail integration: pixel-aligned appearance features fused
with the human representation by cross-attention over reference views."""
from __future__ import annotations

import numpy as np

from .camera import Camera, image_to_grid, project
from .diffcore import tensor as T
from .diffcore.functional import bilinear_sample
from .diffcore.nn import Linear, MultiHeadAttention, NetworkConfig, ParamStore

FDI_MODES = ("full", "h-only", "a-only", "no-rgb")


def project_views(points: np.ndarray, cams: list[Camera]):
    """Per-view pixel coordinates (N_v, P, 2) and validity (N_v, P)."""
    pix, valid = [], []
    for cam in cams:
        xy, depth = project(cam, points)
        ok = (depth > 0) & (xy[:, 0] >= 0) & (xy[:, 0] < cam.width) & (xy[:, 1] >= 0) & (xy[:, 1] < cam.height)
        pix.append(np.where(ok[:, None], xy, 0.0))
        valid.append(ok)
    return np.stack(pix), np.stack(valid)


class DetailIntegrator:
    def __init__(self, store: ParamStore, cfg: NetworkConfig, name: str = "fdi", residual: bool = True):
        self.fc = Linear(store, f"{name}.fc", 3 + cfg.d1, cfg.d2)
        self.attn = MultiHeadAttention(store, f"{name}.attn", cfg.d2, cfg.fdi_heads)
        self.residual = residual

    def appearance(self, points: np.ndarray, images: np.ndarray, featmaps, cams: list[Camera],
                   factor: float = 8.0, use_rgb: bool = True):
        """a^{1:N_v} as (N_v, P, d2).

        ``images`` is (N_v, H, W, 3) in [0, 1]; ``featmaps`` is (N_v, H', W', d1).
        Points projecting outside a view are zero-filled before the FC layer.
        """
        pix, valid = project_views(points, cams)
        feats = []
        for j in range(len(cams)):
            mask = valid[j][:, None].astype(np.float64)
            if use_rgb:
                rgb = bilinear_sample(images[j], image_to_grid(pix[j])).data * mask
            else:
                rgb = np.zeros((len(points), 3))
            deep = bilinear_sample(featmaps[j], image_to_grid(pix[j], factor)) * mask
            feats.append(T.concat([T.as_tensor(rgb), deep], axis=-1))
        return self.fc(T.stack(feats, axis=0))

    def integrate(self, h, a, mode: str = "full"):
        """Condition feature f (P, d2) from (N_v, P, d2) human and appearance features."""
        h, a = T.as_tensor(h), T.as_tensor(a)
        if h.shape[0] == 0:
            raise ValueError("integrate: need at least one view")
        if h.shape[0] != a.shape[0]:
            raise ValueError(f"integrate: {h.shape[0]} human views vs {a.shape[0]} appearance views")
        if mode == "h-only":
            return T.mean(h, axis=0)
        if mode == "a-only":
            return T.mean(a, axis=0)
        q = T.swapaxes(h, 0, 1)
        kv = T.swapaxes(a, 0, 1)
        f = self.attn(q, kv)
        if self.residual:
            f = f + q
        return T.mean(f, axis=1)

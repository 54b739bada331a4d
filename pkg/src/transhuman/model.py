"""The assembled network: CNN, token encoder, partial fields, detail
integration and radiance heads, plus ray/image rendering on top of them."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import grouping as grp
from .body import BodyModel, PosedBody
from .camera import Camera, generate_rays, pixel_grid
from .diffcore import tensor as T
from .diffcore.nn import NetworkConfig, ParamStore, ToyCNN
from .dparf import PartialFieldSet, aggregate_representation, build_fields, k_nearest_fields
from .fdi import DetailIntegrator
from .renderer import (
    EvalCounter, RadianceHeads, RenderOutput, body_ray_bounds, composite, progressive_filter, sample_ray,
)
from .transhe import TokenEncoder, make_tokens, paint

GROUPINGS = ("canonical-kmeans", "canonical-grid", "observation-grid")
PE_MODES = ("canonical", "observation")


@dataclass
class ModelOptions:
    n_k: int = 7
    coordinate: str = "deformed"
    frame_convention: str = "inverse"
    fdi: str = "full"
    pe: str = "canonical"
    grouping: str = "canonical-kmeans"
    fdi_residual: bool = True


@dataclass
class RenderSettings:
    n_samples: int = 64
    threshold: float = 0.1
    density_gate: float = 1e-4
    bbox_padding: float = 0.2
    far_field: bool = True
    stratified: bool = False


@dataclass
class SceneEncoding:
    """Everything per (frame, reference views) that query points read from."""

    posed: PosedBody
    grouping: grp.GroupingDictionary
    fields: PartialFieldSet
    images: np.ndarray
    featmaps: object
    cams: list
    tokens: object = None
    painted_valid: np.ndarray | None = None


class TransHumanModel:
    def __init__(self, cfg: NetworkConfig | None = None, options: ModelOptions | None = None, seed: int = 0):
        self.cfg = cfg or NetworkConfig()
        self.options = options or ModelOptions()
        self.store = ParamStore(seed)
        self.cnn = ToyCNN(self.store, "cnn", self.cfg.cnn_channels, self.cfg.d1)
        self.encoder = TokenEncoder(self.store, self.cfg)
        self.fdi = DetailIntegrator(self.store, self.cfg, residual=self.options.fdi_residual)
        self.heads = RadianceHeads(self.store, self.cfg)

    # -- per-scene encoding --------------------------------------------------
    def feature_maps(self, images: np.ndarray):
        """(N_v, H, W, 3) images -> (N_v, H/8, W/8, d1) tensor."""
        x = np.ascontiguousarray(np.asarray(images, dtype=np.float64).transpose(0, 3, 1, 2))
        return T.transpose(self.cnn(x), (0, 2, 3, 1))

    def encode_scene(self, body: BodyModel, posed: PosedBody, grouping: grp.GroupingDictionary,
                     images: np.ndarray, cams: list[Camera]) -> SceneEncoding:
        featmaps = self.feature_maps(images)
        per_view, valid = [], []
        tokens = None
        for j, cam in enumerate(cams):
            painted = paint(posed.observation_vertices, featmaps[j], cam, posed.normals, ToyCNN.factor)
            tokens = make_tokens(painted, grouping, body.canonical_vertices, posed.observation_vertices)
            per_view.append(tokens.features)
            valid.append(painted.valid)
        feats = T.stack(per_view, axis=0)
        pos = tokens.observation_positions if self.options.pe == "observation" else tokens.canonical_positions
        encoded = self.encoder(feats, pos)
        raw_rot = grp.aggregate(posed.per_vertex_rotations, grouping)
        fields = build_fields(encoded, tokens.observation_positions, raw_rot)
        return SceneEncoding(posed, grouping, fields, np.asarray(images), featmaps, list(cams), tokens, np.stack(valid))

    # -- per-point evaluation ------------------------------------------------
    def condition(self, points: np.ndarray, scene: SceneEncoding):
        opt = self.options
        k = min(opt.n_k, scene.fields.n_fields)
        idx = k_nearest_fields(points, scene.fields, k)
        h = aggregate_representation(points, scene.fields, k, self.cfg.L2, opt.coordinate, opt.frame_convention, idx)
        mode = opt.fdi
        if mode == "h-only":
            return self.fdi.integrate(h, h, "h-only")
        a = self.fdi.appearance(points, scene.images, scene.featmaps, scene.cams, ToyCNN.factor,
                                use_rgb=(mode != "no-rgb"))
        return self.fdi.integrate(h, a, "full" if mode == "no-rgb" else mode)

    def render_rays(self, scene: SceneEncoding, origins: np.ndarray, dirs: np.ndarray,
                    settings: RenderSettings, mode: str = "train", rng=None,
                    counter: EvalCounter | None = None) -> RenderOutput:
        """Render rays against one scene encoding.

        ``train``: network on points within the threshold of the body, all of them
        coloured. ``full``: network on every sample (far-field contract optional).
        ``progressive``: filtered density pass, then colour only where sigma > gate.
        """
        if mode not in ("train", "full", "progressive"):
            raise ValueError(f"unknown render mode {mode!r}")
        n_rays = len(origins)
        ns = settings.n_samples
        verts = scene.posed.observation_vertices
        near, far, hit = body_ray_bounds(origins, dirs, verts, settings.bbox_padding)
        rays = np.flatnonzero(hit)
        color = T.as_tensor(np.zeros((n_rays, 3)))
        opacity = np.zeros(n_rays)
        depth = np.zeros(n_rays)
        counter = counter if counter is not None else EvalCounter()
        if len(rays) == 0:
            return RenderOutput(color, opacity, depth)

        batch = sample_ray(origins[rays], dirs[rays], near[rays], far[rays], ns,
                           settings.stratified and mode == "train", rng)
        pts = batch.points.reshape(-1, 3)
        counter.points_sampled += len(pts)
        keep = progressive_filter(pts, verts, settings.threshold) if (settings.far_field or mode != "full") \
            else np.ones(len(pts), dtype=bool)
        eval_idx = np.arange(len(pts)) if mode == "full" else np.flatnonzero(keep)
        pdirs = np.repeat(dirs[rays], ns, axis=0)

        shape = (len(rays), ns)
        if len(eval_idx) == 0:
            sigma = T.as_tensor(np.zeros(shape))
            cols = T.as_tensor(np.zeros(shape + (3,)))
        else:
            f = self.condition(pts[eval_idx], scene)
            sig = self.heads.density(f)
            counter.density_evals += len(eval_idx)
            if mode == "full":
                gate = keep.astype(np.float64) if settings.far_field else 1.0
                if settings.far_field:
                    gate = gate * (sig.data > settings.density_gate)
                sigma = T.reshape(sig * gate, shape)
                c = self.heads.colour(f, pdirs[eval_idx])
                counter.color_evals += len(eval_idx)
                cols = T.reshape(c, shape + (3,))
            elif mode == "progressive":
                lit = sig.data > settings.density_gate
                sig = sig * lit.astype(np.float64)
                sigma = T.scatter(sig, eval_idx, shape)
                sel = np.flatnonzero(lit)
                if len(sel):
                    c = self.heads.colour(T.getitem(f, sel), pdirs[eval_idx[sel]])
                    counter.color_evals += len(sel)
                    cols = T.reshape(T.scatter(c, (eval_idx[sel][:, None] * 3 + np.arange(3)).reshape(-1),
                                               (len(pts), 3)), shape + (3,))
                else:
                    cols = T.as_tensor(np.zeros(shape + (3,)))
            else:
                sigma = T.scatter(sig, eval_idx, shape)
                c = self.heads.colour(f, pdirs[eval_idx])
                counter.color_evals += len(eval_idx)
                cols = T.reshape(T.scatter(c, (eval_idx[:, None] * 3 + np.arange(3)).reshape(-1),
                                           (len(pts), 3)), shape + (3,))
        out = composite(sigma, cols, batch.deltas, batch.depths)
        rows = (rays[:, None] * 3 + np.arange(3)).reshape(-1)
        color = T.scatter(out.color, rows, (n_rays, 3))
        opacity[rays] = out.opacity.data
        depth[rays] = out.depth.data
        return RenderOutput(color, opacity, depth, None)

    def render_image(self, scene: SceneEncoding, cam: Camera, settings: RenderSettings, mode: str = "full",
                     chunk: int = 4096, counter: EvalCounter | None = None):
        """Render a whole view without recording a tape; returns (rgb, opacity, depth) maps."""
        counter = counter if counter is not None else EvalCounter()
        pix = pixel_grid(cam)
        origins, dirs = generate_rays(cam, pix)
        rgb = np.zeros((len(pix), 3))
        acc = np.zeros(len(pix))
        dep = np.zeros(len(pix))
        with T.no_grad():
            for s in range(0, len(pix), chunk):
                out = self.render_rays(scene, origins[s : s + chunk], dirs[s : s + chunk], settings, mode,
                                       counter=counter)
                rgb[s : s + chunk] = out.color.data
                acc[s : s + chunk] = out.opacity
                dep[s : s + chunk] = out.depth
        h, w = cam.height, cam.width
        return rgb.reshape(h, w, 3), acc.reshape(h, w), dep.reshape(h, w)


def build_grouping(body: BodyModel, options: ModelOptions, n_tokens: int, seed: int,
                   posed: PosedBody | None = None) -> grp.GroupingDictionary:
    """Grouping dictionary for the configured strategy.

    Grid variants use the cell size whose canonical occupancy is closest to
    ``n_tokens``; the observation variant voxelizes the posed vertices.
    """
    if options.grouping == "canonical-kmeans":
        return grp.kmeans_group(body.canonical_vertices, n_tokens, seed)
    cell = grp.grid_cell_for_count(body.canonical_vertices, n_tokens)
    if options.grouping == "canonical-grid":
        return grp.grid_voxelize_group(body.canonical_vertices, cell)
    if options.grouping == "observation-grid":
        if posed is None:
            raise ValueError("observation-grid grouping needs the posed body")
        return grp.grid_voxelize_group(posed.observation_vertices, cell)
    raise ValueError(f"unknown grouping {options.grouping!r}")

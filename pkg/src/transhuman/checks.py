"""Invariant suite shared by ``transhuman selftest`` and the acceptance tests.

Every check returns a :class:`CheckResult`; numbers in ``detail`` are the
worst values observed, so a failing line says by how much it failed.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import grouping as grp
from .body import SyntheticBodyConfig, apply_global_motion, pose_body, random_rotation, synthesize_body
from .camera import generate_rays, pixel_grid
from .data import DataConfig, camera_ring, pose_sequence, random_appearance, render_ground_truth
from .diffcore import tensor as T
from .diffcore.functional import bilinear_sample, conv2d, sparse_matmul
from .diffcore.nn import NetworkConfig, ParamStore, multi_head_attention
from .dparf import aggregate_representation, build_fields, field_weights, k_nearest_fields, local_coord
from .fdi import DetailIntegrator
from .model import ModelOptions, RenderSettings, TransHumanModel, build_grouping
from .renderer import EvalCounter, composite, sample_depths, transmittance
from .transhe import make_tokens, paint


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str
    seconds: float = 0.0
    values: dict = field(default_factory=dict)

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'} {self.name}: {self.detail} [{self.seconds:.1f}s]"


# -- finite differences ------------------------------------------------------------
def gradcheck(fn, arrays, rng: np.random.Generator, n_coords: int = 8, eps: float = 1e-6,
              floor: float = 1e-7) -> float:
    """Worst relative error between backprop and central differences.

    ``fn`` maps tensors to a tensor of any shape; it is reduced to a scalar
    with fixed random weights. Up to ``n_coords`` entries per input are probed.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    leaves = [T.Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = T.as_tensor(fn(*leaves))
    proj = rng.standard_normal(out.shape)
    T.backward(T.sum_(out * proj))

    def value(xs):
        with T.no_grad():
            return float(np.sum(T.as_tensor(fn(*[T.Tensor(x) for x in xs])).data * proj))

    worst = 0.0
    for i, a in enumerate(arrays):
        if leaves[i].grad is None:
            ana_all = np.zeros(a.size)
        else:
            ana_all = leaves[i].grad.reshape(-1)
        idx = rng.choice(a.size, size=min(n_coords, a.size), replace=False)
        num = np.empty(len(idx))
        for n, j in enumerate(idx):
            xs = [x.copy() for x in arrays]
            xs[i].flat[j] += eps
            fp = value(xs)
            xs[i].flat[j] -= 2 * eps
            fm = value(xs)
            num[n] = (fp - fm) / (2 * eps)
        ana = ana_all[idx]
        err = np.linalg.norm(num - ana) / max(np.linalg.norm(num), np.linalg.norm(ana), floor)
        worst = max(worst, float(err))
    return worst


def param_gradcheck(loss_fn, store: ParamStore, names, rng, n_coords: int = 4, eps: float = 1e-6,
                    floor: float = 1e-7) -> float:
    """Same as :func:`gradcheck` but probing entries of named parameters in place."""
    store.zero_grad()
    loss = loss_fn()
    T.backward(loss)
    grads = {n: (np.zeros_like(store[n].data) if store[n].grad is None else store[n].grad.copy()) for n in names}
    worst = 0.0
    for name in names:
        p = store[name]
        idx = rng.choice(p.data.size, size=min(n_coords, p.data.size), replace=False)
        num = np.empty(len(idx))
        for k, j in enumerate(idx):
            old = p.data.flat[j]
            with T.no_grad():
                p.data.flat[j] = old + eps
                fp = float(loss_fn().data)
                p.data.flat[j] = old - eps
                fm = float(loss_fn().data)
            p.data.flat[j] = old
            num[k] = (fp - fm) / (2 * eps)
        ana = grads[name].reshape(-1)[idx]
        err = np.linalg.norm(num - ana) / max(np.linalg.norm(num), np.linalg.norm(ana), floor)
        worst = max(worst, float(err))
    store.zero_grad()
    return worst


# -- small scenes ------------------------------------------------------------------
@dataclass
class TinyScene:
    body: object
    posed: object
    grouping: grp.GroupingDictionary
    images: np.ndarray
    cams: list
    target: object
    target_image: np.ndarray


def tiny_scene(seed: int = 0, n_vertices: int = 240, size: int = 32, n_views: int = 2, n_tokens: int = 12) -> TinyScene:
    rng = np.random.default_rng(seed)
    body, radii = synthesize_body(SyntheticBodyConfig(n_vertices), seed)
    app = random_appearance(radii, rng)
    pose = pose_sequence(1, rng)[0]
    posed = pose_body(body, pose)
    cams = camera_ring(DataConfig(cameras=n_views + 1, image_size=size))
    imgs = np.stack([render_ground_truth(posed, app, c) for c in cams])
    g = grp.kmeans_group(body.canonical_vertices, n_tokens, seed)
    return TinyScene(body, posed, g, imgs[:n_views], cams[:n_views], cams[n_views], imgs[n_views])


def tiny_network() -> NetworkConfig:
    return NetworkConfig(d1=8, L1=2, L2=2, L3=2, depth=1, heads=2, mlp_ratio=2, cnn_channels=(4, 6),
                         head_width=16)


# -- criterion 1: gradients --------------------------------------------------------
def _op_cases():
    """name -> builder(rng) returning (fn, arrays, tolerance)."""
    t1 = 1e-4
    cases = {}

    def unary(name, f, lo=-2.0, hi=2.0, avoid=None):
        def build(rng):
            x = rng.uniform(lo, hi, (3, 4))
            if avoid is not None:
                x = np.where(np.abs(x - avoid) < 0.1, x + 0.3, x)
            return f, [x], t1
        cases[name] = build

    unary("exp", T.exp)
    unary("log", T.log, 0.2, 3.0)
    unary("sqrt", T.sqrt, 0.2, 3.0)
    unary("sin", T.sin)
    unary("cos", T.cos)
    unary("relu", T.relu, avoid=0.0)
    unary("sigmoid", T.sigmoid, -6, 6)
    unary("softplus", T.softplus, -6, 6)
    unary("tanh", T.tanh)
    unary("power", lambda x: T.power(x, 2.5), 0.2, 2.0)
    unary("sum", lambda x: T.sum_(x, axis=1, keepdims=True))
    unary("mean", lambda x: T.mean(x, axis=0))
    unary("reshape", lambda x: T.reshape(x, (2, 6)) * np.arange(12.0).reshape(2, 6))
    unary("transpose", lambda x: T.transpose(x) * np.arange(12.0).reshape(4, 3))
    unary("getitem", lambda x: T.getitem(x, (np.array([0, 2, 0]), np.array([1, 1, 1]))))
    unary("take_rows", lambda x: T.take_rows(x, np.array([2, 0, 2, 1])))
    unary("cumsum", lambda x: T.cumsum(x, axis=-1))
    unary("softmax", lambda x: T.softmax(x, axis=-1))
    unary("scatter", lambda x: T.scatter(T.reshape(x, (12,)), np.arange(12) * 7 % 13, (13,)))
    unary("scatter_rows", lambda x: T.scatter_rows(x, np.array([[0, 4, 2, 5]] * 3), 6))

    def binary(name, f, bshape=(3, 4), positive=False):
        def build(rng):
            a = rng.uniform(-2, 2, (3, 4))
            b = rng.uniform(0.5, 2.0, bshape) if positive else rng.uniform(-2, 2, bshape)
            return f, [a, b], t1
        cases[name] = build

    binary("add", T.add, (1, 4))
    binary("sub", T.sub, (3, 1))
    binary("mul", T.mul, (4,))
    binary("div", T.div, (3, 4), positive=True)
    binary("concat", lambda a, b: T.concat([a, b], axis=0), (2, 4))
    binary("stack", lambda a, b: T.stack([a, b], axis=1))
    binary("matmul", T.matmul, (4, 5))
    cases["matmul_batched"] = lambda rng: (T.matmul, [rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 2))], t1)
    cases["layer_norm"] = lambda rng: (T.layer_norm, [rng.normal(size=(3, 6)), rng.normal(size=6), rng.normal(size=6)], t1)
    cases["conv2d"] = lambda rng: (lambda x, w, b: conv2d(x, w, b, stride=2, pad=1),
                                   [rng.normal(size=(2, 3, 7, 6)), rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)], t1)
    cases["bilinear_sample"] = lambda rng: (bilinear_sample, [rng.normal(size=(5, 6, 3)),
                                                              rng.uniform(-0.3, 5.2, (7, 2))], t1)
    cases["attention"] = lambda rng: (lambda q, k, v: multi_head_attention(q, k, v, 2),
                                      [rng.normal(size=(3, 2, 4)), rng.normal(size=(3, 5, 4)), rng.normal(size=(3, 5, 4))], t1)
    cases["composite"] = lambda rng: (
        lambda s, c: composite(s, c, np.full((4, 6), 0.1), np.linspace(0, 1, 6) * np.ones((4, 1))).color,
        [rng.uniform(0, 5, (4, 6)), rng.uniform(0, 1, (4, 6, 3))], t1)

    def aggregate_case(rng):
        v = rng.normal(size=(30, 3))
        g = grp.kmeans_group(v, 5, int(rng.integers(1000)))
        return (lambda x: grp.aggregate(x, g)), [rng.normal(size=(30, 4))], t1
    cases["aggregate"] = aggregate_case

    def sparse_case(rng):
        import scipy.sparse as sp
        m = sp.random(5, 8, density=0.4, random_state=int(rng.integers(1 << 30)), format="csr")
        return (lambda x: sparse_matmul(m, x)), [rng.normal(size=(8, 3))], t1
    cases["sparse_matmul"] = sparse_case

    def loss_case(rng):
        from .training import total_loss
        truth = rng.uniform(0, 1, (2 * 8 * 8, 3))
        return (lambda r: total_loss(r, truth, 0.1, 8)[0]), [rng.uniform(0, 1, (2 * 8 * 8, 3))], t1
    cases["total_loss"] = loss_case
    return cases


def _scene_cases():
    """Composite paths through the body-conditioned pipeline."""
    cases = {}

    def paint_tokens(rng):
        s = tiny_scene(int(rng.integers(1000)))
        fm_shape = (4, 4, 5)

        def fn(fm):
            p = paint(s.posed.observation_vertices, fm, s.cams[0], s.posed.normals, 8.0)
            return make_tokens(p, s.grouping, s.body.canonical_vertices, s.posed.observation_vertices).features
        return fn, [rng.normal(size=fm_shape)], 1e-4
    cases["paint_tokens"] = paint_tokens

    def eq6(rng):
        origins = rng.normal(size=(9, 3))
        rot = np.stack([random_rotation(rng) for _ in range(9)])
        fields = build_fields(None, origins, rot)
        pts = rng.normal(size=(6, 3)) * 0.8
        idx = k_nearest_fields(pts, fields, 4)

        def fn(p, feats):
            fields.features = feats
            return aggregate_representation(p, fields, 4, 2, "deformed", "inverse", idx)
        return fn, [pts, rng.normal(size=(9, 5))], 1e-4
    cases["field_aggregation"] = eq6

    def cross_attention(rng):
        store = ParamStore(int(rng.integers(1000)))
        cfg = NetworkConfig(d1=4, L2=1)
        fdi = DetailIntegrator(store, cfg)
        return (lambda h, a: fdi.integrate(h, a, "full")), [rng.normal(size=(3, 5, cfg.d2)),
                                                           rng.normal(size=(3, 5, cfg.d2))], 1e-4
    cases["cross_attention"] = cross_attention
    return cases


def pipeline_gradcheck(seed: int) -> float:
    rng = np.random.default_rng(seed)
    s = tiny_scene(seed)
    model = TransHumanModel(tiny_network(), ModelOptions(n_k=3), seed)
    settings = RenderSettings(n_samples=12)
    pix = pixel_grid(s.target)
    centre = np.abs(pix - 16).max(axis=1) < 5
    pix = pix[centre][rng.choice(centre.sum(), 6, replace=False)]
    o, d = generate_rays(s.target, pix)
    truth = s.target_image[pix[:, 1].astype(int), pix[:, 0].astype(int)]

    def loss():
        scene = model.encode_scene(s.body, s.posed, s.grouping, s.images, s.cams)
        out = model.render_rays(scene, o, d, settings, "train")
        return T.mean((out.color - truth) * (out.color - truth))

    names = ["cnn.0.weight", "cnn.2.weight", "transhe.pe_proj.weight", "transhe.transformer.0.attn.q.weight",
             "fdi.fc.weight", "fdi.attn.v.weight", "heads.sigma.0.weight", "heads.color.1.weight"]
    return param_gradcheck(loss, model.store, names, rng, n_coords=3)


def check_gradients(n_seeds: int = 20, pipeline_seeds: int | None = None) -> CheckResult:
    t0 = time.perf_counter()
    worst: dict[str, float] = {}
    for name, build in {**_op_cases(), **_scene_cases()}.items():
        for seed in range(n_seeds):
            rng = np.random.default_rng([seed, len(name)])
            fn, arrays, _ = build(rng)
            worst[name] = max(worst.get(name, 0.0), gradcheck(fn, arrays, rng))
    pipe = max(pipeline_gradcheck(s) for s in range(pipeline_seeds or n_seeds))
    bad = sorted(k for k, v in worst.items() if not v < 1e-4)
    ok = not bad and pipe < 1e-3
    top = max(worst, key=worst.get)
    detail = (f"{len(worst)} ops x {n_seeds} seeds, worst {top}={worst[top]:.2e} (<1e-4); "
              f"pipeline {pipe:.2e} (<1e-3)" + (f"; failing {bad}" if bad else ""))
    return CheckResult("gradients", ok, detail, time.perf_counter() - t0, {"ops": worst, "pipeline": pipe})


# -- criterion 2: rigid-motion invariance ------------------------------------------
def check_geometry_invariance(n_trials: int = 100, seed: int = 0) -> CheckResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    body, _ = synthesize_body(SyntheticBodyConfig(600), seed)
    g = grp.kmeans_group(body.canonical_vertices, 40, seed)
    feats = rng.normal(size=(g.n_tokens, 6))
    worst_p = worst_h = 0.0
    idx_same = True
    poses = pose_sequence(n_trials, rng)
    for i in range(n_trials):
        pose = poses[i]
        rot, trans = random_rotation(rng), rng.normal(size=3)
        moved = apply_global_motion(body, pose, rot, trans)
        a, b = pose_body(body, pose), pose_body(body, moved)
        fa = build_fields(feats, grp.aggregate(a.observation_vertices, g), grp.aggregate(a.per_vertex_rotations, g))
        fb = build_fields(feats, grp.aggregate(b.observation_vertices, g), grp.aggregate(b.per_vertex_rotations, g))
        p = a.observation_vertices[rng.integers(body.n_vertices)] + rng.normal(scale=0.05, size=3)
        q = rot @ p + trans
        ia, ib = k_nearest_fields(p[None], fa, 7), k_nearest_fields(q[None], fb, 7)
        idx_same &= bool(np.array_equal(ia, ib))
        worst_p = max(worst_p, np.abs(local_coord(p[None], fa, ia) - local_coord(q[None], fb, ia)).max())
        ha = aggregate_representation(p[None], fa, 7, 4, index=ia).data
        hb = aggregate_representation(q[None], fb, 7, 4, index=ia).data
        worst_h = max(worst_h, np.abs(ha - hb).max())
    ok = worst_p < 1e-9 and worst_h < 1e-9 and idx_same
    return CheckResult("geometry_invariance", ok,
                       f"{n_trials} poses: max |dp| {worst_p:.1e}, max |dh| {worst_h:.1e} (<1e-9), "
                       f"neighbour sets {'equal' if idx_same else 'differ'}", time.perf_counter() - t0,
                       {"p": worst_p, "h": worst_h})


# -- criterion 3: grouping ---------------------------------------------------------
def check_grouping(seed: int = 0, n_poses: int = 10) -> CheckResult:
    t0 = time.perf_counter()
    body, _ = synthesize_body(SyntheticBodyConfig(), seed)
    vc = body.canonical_vertices
    n_tokens = grp.default_token_count(body.n_vertices)
    opts = ModelOptions()
    ref = build_grouping(body, opts, n_tokens, seed)
    problems = []
    try:
        grp.check_partition(ref, body.n_vertices)
    except ValueError as exc:
        problems.append(f"partition: {exc}")
    rng = np.random.default_rng(seed)
    for pose in pose_sequence(n_poses, rng, amplitude=1.5):
        g = build_grouping(body, opts, n_tokens, seed, pose_body(body, pose))
        if g.to_dict() != ref.to_dict():
            problems.append("dictionary depends on pose")
            break
    again = grp.kmeans_group(vc, n_tokens, seed)
    if again.to_dict() != ref.to_dict():
        problems.append("k-means not deterministic")
    err = float(np.abs(grp.aggregate(vc, ref) - ref.centroids).max())
    if not err < 1e-12:
        problems.append(f"centroid error {err:.1e}")
    cell = grp.grid_cell_for_count(vc, n_tokens)
    grid = grp.grid_voxelize_group(vc, cell)
    grp.check_partition(grid, body.n_vertices)
    var_k, var_g = float(np.var(ref.sizes())), float(np.var(grid.sizes()))
    if not var_g > var_k:
        problems.append("grid variance not larger")
    detail = (f"N_t={ref.n_tokens}, centroid err {err:.1e}, size variance grid {var_g:.1f} "
              f"({grid.n_tokens} cells) vs k-means {var_k:.1f}")
    return CheckResult("grouping", not problems, detail + ("; " + "; ".join(problems) if problems else ""),
                       time.perf_counter() - t0, {"var_grid": var_g, "var_kmeans": var_k})


# -- criterion 4: volume rendering oracle ------------------------------------------
def homogeneous_colour(n: int, sigma: float = 1.0, length: float = 2.0, slab_end: float | None = None) -> float:
    """Red channel of a ray through a homogeneous red medium over [0, slab_end]."""
    z, delta = sample_depths([0.0], [length], n)
    s = np.full((1, n), sigma)
    if slab_end is not None:
        s = s * (z < slab_end)
    col = np.zeros((1, n, 3))
    col[..., 0] = 1.0
    return float(composite(s, col, delta, z).color[0, 0])


def check_volume_rendering() -> CheckResult:
    t0 = time.perf_counter()
    exact = 1 - math.exp(-2.0)
    rel = abs(homogeneous_colour(512) - exact) / exact
    # a full-interval medium is integrated exactly; a slab ending mid-bin shows the first-order term
    end = 4.0 / 3.0
    slab = 1 - math.exp(-end)
    errs = [abs(homogeneous_colour(n, slab_end=end) - slab) for n in (64, 128, 256, 512)]
    ratios = [a / b for a, b in zip(errs[:-1], errs[1:])]
    rng = np.random.default_rng(0)
    sig = rng.uniform(0, 3, (200, 64))
    delta = rng.uniform(0.01, 0.1, (200, 64))
    tr = transmittance(sig, delta)
    mono = bool((np.diff(tr, axis=1) <= 0).all() and np.all(tr[:, 0] == 1.0))
    op = composite(sig * rng.uniform(0, 50, (200, 1)), rng.uniform(0, 1, (200, 64, 3)), delta).opacity
    in_range = bool((op >= 0).all() and (op <= 1).all())
    ok = rel < 1e-3 and all(1.6 <= r <= 2.4 for r in ratios) and mono and in_range
    detail = (f"512-sample rel err {rel:.1e} (<1e-3); slab error ratios "
              f"{', '.join(f'{r:.2f}' for r in ratios)} (2 +/- 20%); transmittance monotone={mono}; "
              f"opacity in [0,1]={in_range}")
    return CheckResult("volume_rendering", ok, detail, time.perf_counter() - t0, {"rel": rel, "ratios": ratios})


# -- criterion 5: field weights ----------------------------------------------------
def check_field_weights(seed: int = 0) -> CheckResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    origins = rng.normal(size=(20, 3))
    pts = rng.normal(size=(500, 3))
    fields = build_fields(rng.normal(size=(20, 4)), origins, np.tile(np.eye(3), (20, 1, 1)))
    idx = k_nearest_fields(pts, fields, 7)
    w = field_weights(pts, origins, idx)
    sum_err = float(np.abs(w.sum(axis=1) - 1).max())
    # N_k = 1: the nearest field alone, weight exactly one
    i1 = k_nearest_fields(pts, fields, 1)
    h1 = aggregate_representation(pts, fields, 1, 3, index=i1).data
    from .transhe import positional_encoding
    direct = np.concatenate([fields.features.data[i1[:, 0]],
                             positional_encoding(local_coord(pts, fields, i1)[:, 0], 3)], axis=1)
    n1_exact = bool(np.array_equal(field_weights(pts, origins, i1), np.ones((500, 1))) and np.array_equal(h1, direct))
    scale_exact = all(np.array_equal(field_weights(pts * s, origins * s, idx), w) for s in (0.25, 2.0, 8.0))
    scale_any = max(float(np.abs(field_weights(pts * s, origins * s, idx) - w).max()) for s in (0.3, 1.7, 13.0))
    # distances (1, 2, 3) along an axis
    o3 = np.array([[1.0, 0, 0], [0, 2.0, 0], [0, 0, -3.0]])
    w3 = field_weights(np.zeros((1, 3)), o3, np.array([[0, 1, 2]]))[0]
    e = [math.exp(-d / 6.0) for d in (1.0, 2.0, 3.0)]
    ref = np.array([x / sum(e) for x in e])
    ex_err = float(np.abs(w3 - ref).max())
    ok = sum_err < 1e-12 and n1_exact and scale_exact and ex_err < 1e-12
    detail = (f"sum err {sum_err:.1e}; N_k=1 exact={n1_exact}; power-of-two scaling exact={scale_exact} "
              f"(other scales {scale_any:.1e}); (1,2,3) example err {ex_err:.1e}")
    return CheckResult("field_weights", ok, detail, time.perf_counter() - t0, {"weights_123": w3.tolist()})


# -- criterion 6: progressive == full ----------------------------------------------
def check_progressive(seed: int = 0, size: int = 32) -> CheckResult:
    t0 = time.perf_counter()
    s = tiny_scene(seed, n_vertices=400, size=size)
    model = TransHumanModel(tiny_network(), ModelOptions(n_k=3), seed)
    settings = RenderSettings(n_samples=32)
    with T.no_grad():
        scene = model.encode_scene(s.body, s.posed, s.grouping, s.images, s.cams)
    cf, cp = EvalCounter(), EvalCounter()
    full, acc_f, _ = model.render_image(scene, s.target, settings, "full", counter=cf)
    prog, acc_p, _ = model.render_image(scene, s.target, settings, "progressive", counter=cp)
    diff = float(np.abs(full - prog).max())
    fewer = cp.density_evals < cf.density_evals and cp.color_evals < cf.color_evals
    ok = diff < 1e-6 and fewer and float(acc_f.max()) > 0
    detail = (f"max channel diff {diff:.1e} (<1e-6); density evals {cp.density_evals} vs {cf.density_evals}, "
              f"colour evals {cp.color_evals} vs {cf.color_evals}")
    return CheckResult("progressive_equivalence", ok, detail, time.perf_counter() - t0,
                       {"diff": diff, "full": cf, "progressive": cp})


# -- criterion 7: overfit ----------------------------------------------------------
def check_overfit(data_dir, work_dir, steps: int = 2000, seed: int = 0, verbose: bool = False) -> CheckResult:
    """Train the full pipeline on the default scene; compare against the untrained model."""
    from .config import RunConfig
    from .training import Trainer
    t0 = time.perf_counter()
    cfg = RunConfig(seed=seed, dataset=str(data_dir), threads=1)
    tr = Trainer(data_dir, cfg, Path(work_dir) / "overfit")
    before = {split: tr.evaluate(split) for split in ("train", "test")}
    for split, m in before.items():
        tr.log_metrics(0, split, m)
    tr.train(steps, eval_every=0, verbose=verbose)
    loss = tr.state.history[-1]["loss"]
    after = {split: tr.evaluate(split) for split in ("train", "test")}
    for split, m in after.items():
        tr.log_metrics(steps, split, m, loss)
    mse_ratio = after["train"]["mse"] / before["train"]["mse"]
    d_train = after["train"]["psnr"] - before["train"]["psnr"]
    d_test = after["test"]["psnr"] - before["test"]["psnr"]
    ok = mse_ratio <= 0.2 and d_train >= 8.0 and d_test >= 5.0
    minutes = (time.perf_counter() - t0) / 60
    detail = (f"{steps} steps: train MSE {before['train']['mse']:.2e} -> {after['train']['mse']:.2e} "
              f"({100 * mse_ratio:.1f}% <= 20%); train PSNR {before['train']['psnr']:.2f} -> "
              f"{after['train']['psnr']:.2f} (+{d_train:.2f} >= 8 dB); held-out PSNR "
              f"{before['test']['psnr']:.2f} -> {after['test']['psnr']:.2f} (+{d_test:.2f} >= 5 dB); "
              f"{minutes:.1f} min")
    return CheckResult("overfit", ok, detail, time.perf_counter() - t0,
                       {"before": before, "after": after, "mse_ratio": mse_ratio})


# -- criterion 8: ablation harness -------------------------------------------------
def check_ablation(data_dir, work_dir, steps: int = 2, base=None, echo=None) -> CheckResult:
    from .ablation import AXES, COLUMNS, format_table, parse_table, run_axis
    from .config import RunConfig
    t0 = time.perf_counter()
    base = base or RunConfig()
    rows, problems = [], []
    for axis in AXES:
        got = run_axis(data_dir, base, axis, steps, Path(work_dir) / "ablate", echo)
        if [r["value"] for r in got] != list(AXES[axis][1]):
            problems.append(f"{axis}: wrong rows")
        rows += got
    parsed = parse_table(format_table(rows))
    for r in parsed:
        for c in COLUMNS[3:]:
            if not math.isfinite(float(r[c])):
                problems.append(f"{r['axis']}={r['value']}: {c} not finite")
    selectable = {("coordinate", "none"), ("coordinate", "absolute"), ("pe", "observation"),
                  ("grouping", "observation-grid"), ("fdi", "h-only"), ("fdi", "a-only"), ("fdi", "no-rgb")}
    missing = selectable - {(r["axis"], r["value"]) for r in parsed}
    if missing:
        problems.append(f"missing variants {sorted(missing)}")
    detail = f"{len(AXES)} axes, {len(parsed)} rows x {len(COLUMNS)} columns, named variants all ran"
    return CheckResult("ablation", not problems, detail + ("; " + "; ".join(problems) if problems else ""),
                       time.perf_counter() - t0, {"rows": parsed})


# -- criterion 9: determinism ------------------------------------------------------
def check_determinism(data_dir, work_dir, steps: int = 100, seed: int = 0) -> CheckResult:
    from .cli import set_threads
    from .config import RunConfig
    from .training import Trainer
    t0 = time.perf_counter()
    set_threads(1)
    blobs = []
    for run in ("a", "b"):
        cfg = RunConfig(seed=seed, dataset=str(data_dir), checkpoint_every=steps, threads=1)
        tr = Trainer(data_dir, cfg, Path(work_dir) / f"determinism_{run}")
        tr.train(steps)
        blobs.append(tr.checkpoint_path(steps).read_bytes())
    same = blobs[0] == blobs[1]
    return CheckResult("determinism", same, f"step-{steps} checkpoints {'bit-identical' if same else 'differ'} "
                       f"({len(blobs[0])} bytes)", time.perf_counter() - t0)


def run_all(quick: bool = False) -> list[CheckResult]:
    results = [
        check_gradients(n_seeds=3 if quick else 20),
        check_geometry_invariance(20 if quick else 100),
        check_grouping(),
        check_volume_rendering(),
        check_field_weights(),
        check_progressive(),
    ]
    if not quick:
        import tempfile
        from .data import gen_data
        with tempfile.TemporaryDirectory() as tmp:
            data = gen_data(Path(tmp) / "data", DataConfig(frames=2, image_size=64, n_vertices=600))
            results.append(check_determinism(data, tmp, steps=10))
    return results

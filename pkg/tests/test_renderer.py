import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from transhuman import _kernels
from transhuman.camera import look_at, pixel_grid
from transhuman.checks import tiny_network, tiny_scene
from transhuman.diffcore import ParamStore, Tensor
from transhuman.model import ModelOptions, RenderSettings, TransHumanModel
from transhuman.renderer import (
    EvalCounter, RadianceHeads, composite, progressive_filter, sample_depths, sample_ray, transmittance,
)


def test_predict_ranges_and_zeroed_heads(rng):
    cfg = tiny_network()
    store = ParamStore(0)
    heads = RadianceHeads(store, cfg)
    f = rng.normal(size=(20, cfg.d2)) * 5
    d = rng.normal(size=(20, 3))
    sig, col = heads.predict(f, d)
    assert np.all(sig.data >= 0) and np.all((col.data > 0) & (col.data < 1))
    for _, p in store.items():
        p.data[...] = 0.0
    sig, col = heads.predict(f, d)
    np.testing.assert_allclose(sig.data, np.log(2.0), rtol=1e-15)
    np.testing.assert_allclose(col.data, 0.5, rtol=1e-15)


def test_sample_depths_examples():
    z, delta = sample_depths(0.0, 2.0, 2)
    np.testing.assert_allclose(z, [[0.5, 1.5]])
    np.testing.assert_allclose(delta, [[1.0, 1.0]])
    with pytest.raises(ValueError):
        sample_depths(0.0, 1.0, 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 40))
def test_stratified_samples_in_bins(seed, n):
    rng = np.random.default_rng(seed)
    z, _ = sample_depths(np.array([1.0, 2.0]), np.array([3.0, 2.5]), n, True, rng)
    edges = np.linspace(0, 1, n + 1)
    u = (z - [[1.0], [2.0]]) / [[2.0], [0.5]]
    assert np.all(u >= edges[:-1] - 1e-12) and np.all(u <= edges[1:] + 1e-12)
    assert np.all(np.diff(z, axis=1) >= 0)
    z2, _ = sample_depths(np.array([1.0, 2.0]), np.array([3.0, 2.5]), n, True, np.random.default_rng(seed))
    np.testing.assert_array_equal(z, z2)


def test_sample_ray_points():
    b = sample_ray(np.zeros((1, 3)), np.array([[0, 0, 1.0]]), [0.0], [2.0], 4)
    np.testing.assert_allclose(b.points[0, :, 2], [0.25, 0.75, 1.25, 1.75])


def test_composite_examples():
    out = composite(np.zeros((1, 8)), np.ones((1, 8, 3)), np.full((1, 8), 0.1))
    assert np.all(out.color == 0) and out.opacity[0] == 0
    sig = np.zeros((1, 4))
    sig[0, 0] = 1e6
    col = np.zeros((1, 4, 3))
    col[0, 0] = [0.2, 0.4, 0.6]
    col[0, 1:] = 1.0
    out = composite(sig, col, np.full((1, 4), 0.1))
    np.testing.assert_allclose(out.color[0], [0.2, 0.4, 0.6], rtol=1e-12)
    np.testing.assert_allclose(out.opacity, 1.0)
    z, delta = sample_depths(0.0, 2.0, 512)
    c = np.zeros((1, 512, 3))
    c[..., 0] = 1.0
    out = composite(np.ones((1, 512)), c, delta, z)
    np.testing.assert_allclose(out.color[0], [1 - np.exp(-2.0), 0, 0], rtol=1e-3)


def test_composite_tensor_matches_array(rng):
    sig = rng.uniform(0, 3, (4, 6))
    col = rng.uniform(size=(4, 6, 3))
    delta = rng.uniform(0.05, 0.2, (4, 6))
    z = np.cumsum(delta, axis=1)
    a = composite(sig, col, delta, z)
    t = composite(Tensor(sig), Tensor(col), delta, z)
    np.testing.assert_allclose(t.color.data, a.color, atol=1e-15)
    np.testing.assert_allclose(t.opacity.data, a.opacity, atol=1e-15)
    np.testing.assert_allclose(t.depth.data, a.depth, atol=1e-15)
    np.testing.assert_allclose(a.weights.sum(-1), a.opacity, atol=1e-14)
    np.testing.assert_allclose(transmittance(sig, delta)[:, 0], 1.0)


def test_filter_examples():
    v = np.zeros((1, 3))
    keep = progressive_filter(np.array([[0.05, 0, 0], [0.15, 0, 0], [0.1, 0, 0]]), v, 0.1)
    assert keep.tolist() == [True, False, False]   # strict threshold


def test_filter_grid_matches_brute(rng):
    verts = rng.normal(size=(300, 3)) * 0.3
    pts = rng.normal(size=(2000, 3)) * 0.5
    a = _kernels.within_distance(pts, verts, 0.1, "grid")
    b = _kernels.within_distance(pts, verts, 0.1, "brute")
    np.testing.assert_array_equal(a, b)
    assert 0 < a.mean() < 1


@pytest.fixture(scope="module")
def scene_model():
    sc = tiny_scene(2)
    model = TransHumanModel(tiny_network(), ModelOptions(n_k=3), seed=0)
    scene = model.encode_scene(sc.body, sc.posed, sc.grouping, sc.images, sc.cams)
    return sc, model, scene


def test_empty_scene_is_black(scene_model):
    sc, model, scene = scene_model
    away = look_at([0.0, 0.0, 3.0], [0.0, 0.0, 10.0], [0, 1, 0], 30.0, 30.0, 16, 16)
    for mode in ("full", "progressive"):
        c = EvalCounter()
        rgb, acc, dep = model.render_image(scene, away, RenderSettings(n_samples=16), mode, counter=c)
        assert np.all(rgb == 0) and np.all(acc == 0) and c.density_evals == 0


def test_full_equals_progressive(scene_model):
    sc, model, scene = scene_model
    rs = RenderSettings(n_samples=24)
    cf, cp = EvalCounter(), EvalCounter()
    full = model.render_image(scene, sc.target, rs, "full", counter=cf)
    prog = model.render_image(scene, sc.target, rs, "progressive", counter=cp)
    for a, b in zip(full, prog):
        assert np.abs(a - b).max() < 1e-6
    assert cp.density_evals < cf.density_evals
    assert cp.color_evals <= cp.density_evals
    assert full[1].max() > 0 and full[1].max() <= 1.0


def test_resolution_doubling_quadruples_rays():
    a = look_at([0.0, 0.0, 3.0], [0, 0, 0], [0, 1, 0], 30.0, 30.0, 16, 12)
    b = look_at([0.0, 0.0, 3.0], [0, 0, 0], [0, 1, 0], 60.0, 60.0, 32, 24)
    assert len(pixel_grid(b)) == 4 * len(pixel_grid(a))


def test_bad_render_mode(scene_model):
    sc, model, scene = scene_model
    with pytest.raises(ValueError):
        model.render_rays(scene, np.zeros((1, 3)), np.array([[0, 0, 1.0]]), RenderSettings(), "bogus")

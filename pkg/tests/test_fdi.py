import numpy as np
import pytest

from transhuman.camera import look_at
from transhuman.checks import tiny_network
from transhuman.diffcore import ParamStore
from transhuman.fdi import DetailIntegrator


def _setup(residual=True, seed=0):
    cfg = tiny_network()
    return DetailIntegrator(ParamStore(seed), cfg, residual=residual), cfg


def _cams(n=2):
    return [look_at([3.0 * np.sin(a), 0.0, 3.0 * np.cos(a)], [0, 0, 0], [0, 1, 0], 40.0, 40.0, 32, 32)
            for a in np.linspace(0, 1, n)]


def test_constant_inputs_give_identical_appearance(rng):
    fdi, cfg = _setup()
    cams = _cams(1)
    imgs = np.full((1, 32, 32, 3), 0.5)
    fms = np.full((1, 4, 4, cfg.d1), 0.3)
    a = fdi.appearance(rng.uniform(-0.3, 0.3, (10, 3)), imgs, fms, cams).data
    np.testing.assert_allclose(a, np.broadcast_to(a[:, :1], a.shape), atol=1e-14)


def test_behind_camera_is_fc_of_zero(rng):
    fdi, cfg = _setup()
    cams = _cams(1)
    a = fdi.appearance(np.array([[0.0, 0.0, 10.0]]), rng.uniform(size=(1, 32, 32, 3)),
                       rng.normal(size=(1, 4, 4, cfg.d1)), cams).data
    np.testing.assert_allclose(a[0, 0], fdi.fc(np.zeros(3 + cfg.d1)).data, atol=0)


def test_no_rgb_zeroes_colour_input(rng):
    fdi, cfg = _setup()
    cams = _cams(1)
    fms = rng.normal(size=(1, 4, 4, cfg.d1))
    pts = rng.uniform(-0.2, 0.2, (4, 3))
    a = fdi.appearance(pts, np.ones((1, 32, 32, 3)), fms, cams, use_rgb=False).data
    b = fdi.appearance(pts, np.zeros((1, 32, 32, 3)), fms, cams).data
    np.testing.assert_allclose(a, b, atol=1e-14)


def test_single_view_and_identical_views(rng):
    fdi, cfg = _setup()
    h = rng.normal(size=(1, 5, cfg.d2))
    a = rng.normal(size=(1, 5, cfg.d2))
    f1 = fdi.integrate(h, a).data
    attn = fdi.attn(np.swapaxes(h, 0, 1), np.swapaxes(a, 0, 1)).data[:, 0]
    np.testing.assert_allclose(f1, attn + h[0], atol=1e-14)
    f3 = fdi.integrate(np.repeat(h, 3, 0), np.repeat(a, 3, 0)).data
    np.testing.assert_allclose(f3, f1, atol=1e-12)


def test_uniform_attention_without_residual(rng):
    fdi, cfg = _setup(residual=False)
    for lin in (fdi.attn.q, fdi.attn.k):
        lin.weight.data[...] = 0.0
        lin.bias.data[...] = 0.0
    h = rng.normal(size=(3, 4, cfg.d2))
    a = rng.normal(size=(3, 4, cfg.d2))
    f = fdi.integrate(h, a).data
    ref = fdi.attn.o(fdi.attn.v(a.mean(axis=0))).data
    np.testing.assert_allclose(f, ref, atol=1e-12)


def test_modes_and_errors(rng):
    fdi, cfg = _setup()
    h = rng.normal(size=(2, 3, cfg.d2))
    a = rng.normal(size=(2, 3, cfg.d2))
    np.testing.assert_allclose(fdi.integrate(h, a, "h-only").data, h.mean(0))
    np.testing.assert_allclose(fdi.integrate(h, a, "a-only").data, a.mean(0))
    with pytest.raises(ValueError):
        fdi.integrate(h[:0], a[:0])
    with pytest.raises(ValueError):
        fdi.integrate(h, a[:1])

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from skimage.metrics import structural_similarity

from transhuman.checks import tiny_network
from transhuman.config import RunConfig
from transhuman.data import Dataset
from transhuman.diffcore import Tensor
from transhuman.training import (
    Trainer, evaluate, mse_loss, perceptual_proxy_loss, psnr, sample_patches, ssim, total_loss,
)


def test_patches_full_image_and_bounds(rng):
    p = sample_patches((8, 8), 8, 1, rng)
    assert sorted(map(tuple, p[0].tolist())) == [(i, j) for i in range(8) for j in range(8)]
    p = sample_patches((40, 20), 7, 50, rng)
    assert p.shape == (50, 49, 2)
    assert p[..., 0].min() >= 0 and p[..., 0].max() < 40 and p[..., 1].max() < 20
    np.testing.assert_array_equal(sample_patches((40, 20), 7, 5, np.random.default_rng(9)),
                                  sample_patches((40, 20), 7, 5, np.random.default_rng(9)))
    with pytest.raises(ValueError):
        sample_patches((40, 20), 21, 1, rng)


def test_mse_examples(rng):
    a = rng.uniform(size=(10, 3))
    assert float(mse_loss(a, a).data) == 0.0
    np.testing.assert_allclose(float(mse_loss(a + 0.1, a).data), 0.01, rtol=1e-12)
    b = rng.uniform(size=(10, 3))
    assert float(mse_loss(a, b).data) == float(mse_loss(b, a).data)
    with pytest.raises(ValueError):
        mse_loss(a, b[:5])


def test_perceptual_basic(rng):
    a = rng.uniform(size=(16, 16, 3))
    assert float(perceptual_proxy_loss(a, a).data) == 0.0
    assert float(perceptual_proxy_loss(a, rng.uniform(size=(16, 16, 3))).data) > 0
    with pytest.raises(ValueError):
        perceptual_proxy_loss(rng.uniform(size=(16, 8, 3)), rng.uniform(size=(16, 8, 3)))


def test_perceptual_prefers_translation(small_dataset):
    ds = Dataset(small_dataset)
    shifted, unrelated = [], []
    imgs = [f.image(k) for s in ds.subjects for f in s.frames for k in range(ds.n_cameras)]
    rng = np.random.default_rng(0)
    for img in imgs:
        j, i = 16, 16
        base = img[j:j + 32, i:i + 32]
        shifted.append(float(perceptual_proxy_loss(base, img[j:j + 32, i + 1:i + 33]).data))
        other = imgs[int(rng.integers(len(imgs)))]
        unrelated.append(float(perceptual_proxy_loss(base, np.roll(other, 24, axis=(0, 1))[j:j + 32, i:i + 32]).data))
    assert np.median(shifted) < np.median(unrelated)


def test_total_loss_arithmetic(rng, monkeypatch):
    import transhuman.training as tr
    monkeypatch.setattr(tr, "mse_loss", lambda r, t: Tensor(np.array(0.04)))
    monkeypatch.setattr(tr, "perceptual_proxy_loss", lambda r, t: Tensor(np.array(0.2)))
    x = rng.uniform(size=(64, 3))
    loss, _ = tr.total_loss(x, x, 0.1, 8)
    np.testing.assert_allclose(float(loss.data), 0.06, rtol=1e-15)


def test_total_loss_lambda(rng):
    r = rng.uniform(size=(2 * 64, 3))
    t = rng.uniform(size=(2 * 64, 3))
    l0, parts = total_loss(r, t, 0.0, 8)
    assert float(l0.data) == float(mse_loss(r, t).data) and parts["per"] == 0.0
    l1, p1 = total_loss(r, t, 0.1, 8)
    l2, _ = total_loss(r, t, 0.2, 8)
    np.testing.assert_allclose(float(l2.data) - float(l1.data), 0.1 * p1["per"], rtol=1e-10)
    assert float(total_loss(r, r, 0.1, 8)[0].data) == 0.0
    with pytest.raises(ValueError):
        total_loss(r, t, -1.0, 8)


def test_psnr_ssim(rng):
    a = rng.uniform(size=(32, 32, 3))
    assert psnr(a, a) == 99.0 and ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert psnr(np.zeros((4, 4)), np.full((4, 4), 0.1)) == pytest.approx(20.0, abs=1e-9)
    b = np.clip(a + rng.normal(scale=0.1, size=a.shape), 0, 1)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-14)
    m = evaluate([a, b], [a, a])
    assert m["psnr"] == pytest.approx((99.0 + psnr(b, a)) / 2)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 0.3))
def test_ssim_matches_skimage(seed, noise):
    rng = np.random.default_rng(seed)
    a = rng.uniform(size=(24, 24, 3))
    b = np.clip(a + rng.normal(scale=noise, size=a.shape), 0, 1)
    ref = structural_similarity(a, b, channel_axis=-1, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                use_sample_covariance=False)
    assert ssim(a, b) == pytest.approx(ref, abs=1e-9)


def _cfg(**kw):
    return RunConfig(network=tiny_network(), patch_size=16, n_samples=32, checkpoint_every=0, **kw)


def test_smoke_50_steps(small_dataset, tmp_path):
    tr = Trainer(small_dataset, _cfg(), tmp_path / "run")
    tr.train(50)
    assert tr.state.step == 50
    assert all(np.isfinite(r["loss"]) for r in tr.state.history)
    assert all(np.isfinite(p.data).all() for _, p in tr.model.store.items())


def test_resume_reproduces_next_loss(small_dataset, tmp_path):
    a = Trainer(small_dataset, _cfg(seed=5), tmp_path / "a")
    a.train(6)
    path = a.save(tmp_path / "ck.thfc")
    nxt = a.train_step()["loss"]
    b = Trainer(small_dataset, _cfg(seed=5), tmp_path / "b")
    b.resume(path)
    assert b.state.step == 6
    assert b.train_step()["loss"] == nxt


def test_loss_drops_after_200_steps(small_dataset, tmp_path):
    tr = Trainer(small_dataset, _cfg(), tmp_path / "run", log=False)
    with_untrained = float(tr.step_loss(0)[0].data)
    tr.train(200)
    assert float(tr.step_loss(0)[0].data) < with_untrained


def test_dataset_shape_violations(small_dataset, tmp_path):
    with pytest.raises(ValueError):
        Trainer(small_dataset, _cfg(n_views=5), tmp_path / "r")
    with pytest.raises(ValueError):
        Trainer(small_dataset, _cfg().replace(patch_size=128), tmp_path / "r")


def test_metrics_log(small_dataset, tmp_path):
    tr = Trainer(small_dataset, _cfg(), tmp_path / "run")
    tr.train(2)
    m = tr.evaluate("test")
    tr.log_metrics(2, "test", m, 0.5)
    line = (tmp_path / "run" / "metrics.log").read_text().strip().splitlines()[-1]
    assert line.startswith("step=2 split=test psnr=") and "seed=0" in line
    assert 0 < m["psnr"] < 99 and 0 < m["ssim"] <= 1

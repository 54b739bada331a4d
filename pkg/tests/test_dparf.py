import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from transhuman.dparf import (
    aggregate_representation, build_fields, field_weights, k_nearest_fields, local_coord, orthonormalize,
)
from transhuman.diffcore import Tensor


def rz(deg):
    return Rotation.from_euler("z", deg, degrees=True).as_matrix()


def test_orthonormalize_examples():
    r = Rotation.random(random_state=3).as_matrix()
    np.testing.assert_allclose(orthonormalize(r), r, atol=1e-14)
    np.testing.assert_allclose(orthonormalize(0.5 * (np.eye(3) + np.eye(3))), np.eye(3), atol=1e-15)
    np.testing.assert_allclose(orthonormalize(0.5 * (rz(10) + rz(-10))), np.eye(3), atol=1e-14)
    with pytest.raises(np.linalg.LinAlgError):
        orthonormalize(np.diag([1.0, 1.0, 0.0]))


def test_orthonormalize_reflection_gives_rotation(rng):
    m = rng.normal(size=(20, 3, 3))
    r = orthonormalize(m)
    np.testing.assert_allclose(np.linalg.det(r), 1.0, atol=1e-12)
    np.testing.assert_allclose(r @ np.swapaxes(r, 1, 2), np.broadcast_to(np.eye(3), r.shape), atol=1e-12)


def test_build_fields_identity_and_global(rng):
    origins = rng.normal(size=(5, 3))
    f = build_fields(None, origins, np.broadcast_to(np.eye(3), (5, 3, 3)))
    np.testing.assert_allclose(f.frames, np.broadcast_to(np.eye(3), (5, 3, 3)), atol=1e-15)
    q = Rotation.random(random_state=1).as_matrix()
    f = build_fields(None, origins, np.broadcast_to(q, (5, 3, 3)))
    np.testing.assert_allclose(f.frames, np.broadcast_to(q, (5, 3, 3)), atol=1e-14)


def _fields(origins, rots=None):
    origins = np.asarray(origins, dtype=np.float64)
    rots = np.broadcast_to(np.eye(3), (len(origins), 3, 3)) if rots is None else rots
    return build_fields(np.eye(len(origins)), origins, rots)


def test_local_coord_examples():
    f = _fields([[1.0, 1.0, 1.0]])
    idx = np.zeros((1, 1), dtype=np.int64)
    np.testing.assert_allclose(local_coord(np.array([[1.0, 1, 1]]), f, idx), [[[0, 0, 0]]])
    np.testing.assert_allclose(local_coord(np.array([[2.0, 3, 4]]), f, idx), [[[1, 2, 3]]])
    f = _fields([[0.0, 0, 0]], rz(90)[None])
    np.testing.assert_allclose(local_coord(np.array([[1.0, 0, 0]]), f, idx), [[[0, -1, 0]]], atol=1e-15)
    lit = local_coord(np.array([[1.0, 0, 0]]), f, idx, convention="literal")
    np.testing.assert_allclose(lit, [[[0, 1, 0]]], atol=1e-15)
    t = local_coord(Tensor(np.array([[1.0, 0, 0]])), f, idx)
    np.testing.assert_allclose(t.data, [[[0, -1, 0]]], atol=1e-15)


def test_knn_examples():
    f = _fields([[0.0, 0, 0], [1.0, 0, 0], [5.0, 0, 0]])
    assert set(k_nearest_fields(np.array([[0.4, 0, 0]]), f, 2)[0]) == {0, 1}
    assert sorted(k_nearest_fields(np.array([[9.0, 0, 0]]), f, 3)[0]) == [0, 1, 2]
    assert k_nearest_fields(np.array([[5.0, 0, 0]]), f, 1)[0, 0] == 2
    with pytest.raises(ValueError):
        k_nearest_fields(np.zeros((1, 3)), f, 4)


def test_weight_examples():
    o = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 0, 3.0]])
    w = field_weights(np.zeros((1, 3)), o, np.array([[0, 1]]))
    np.testing.assert_allclose(w, [[0.5, 0.5]], rtol=1e-15)
    o = np.array([[1.0, 0, 0], [2.0, 0, 0], [3.0, 0, 0]])
    w = field_weights(np.zeros((1, 3)), o, np.array([[0, 1, 2]]))[0]
    e = np.exp(-np.arange(1, 4) / 6.0)
    np.testing.assert_allclose(w, e / e.sum(), rtol=1e-12)
    np.testing.assert_allclose(w, [0.390, 0.330, 0.280], atol=1e-3)
    # all distances zero -> uniform
    w = field_weights(np.zeros((1, 3)), np.zeros((2, 3)), np.array([[0, 1]]))
    np.testing.assert_allclose(w, [[0.5, 0.5]])
    wt = field_weights(Tensor(np.zeros((1, 3))), np.zeros((2, 3)), np.array([[0, 1]]))
    np.testing.assert_allclose(wt.data, [[0.5, 0.5]])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_weights_sum_and_scale(seed, k):
    rng = np.random.default_rng(seed)
    o = rng.normal(size=(8, 3))
    p = rng.normal(size=(5, 3))
    idx = np.argsort(((p[:, None] - o) ** 2).sum(-1), axis=1)[:, :k]
    w = field_weights(p, o, idx)
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(field_weights(4.0 * p, 4.0 * o, idx), w)


def test_nk1_is_nearest_field(rng):
    o = rng.normal(size=(6, 3))
    feats = rng.normal(size=(6, 4))
    f = build_fields(feats, o, np.broadcast_to(np.eye(3), (6, 3, 3)))
    p = rng.normal(size=(7, 3))
    h = aggregate_representation(p, f, 1, 2).data
    near = np.argmin(((p[:, None] - o) ** 2).sum(-1), axis=1)
    np.testing.assert_array_equal(h[:, :4], feats[near])
    assert h.shape == (7, 4 + 12)


def test_coordinate_modes(rng):
    o = rng.normal(size=(6, 3))
    f = build_fields(rng.normal(size=(6, 4)), o, np.broadcast_to(np.eye(3), (6, 3, 3)))
    p = rng.normal(size=(3, 3))
    none = aggregate_representation(p, f, 3, 2, "none").data
    assert np.all(none[:, 4:] == 0)
    from transhuman.transhe import positional_encoding
    ab = aggregate_representation(p, f, 3, 2, "absolute").data
    np.testing.assert_allclose(ab[:, 4:], positional_encoding(p, 2))
    with pytest.raises(ValueError):
        aggregate_representation(p, f, 3, 2, "bogus")


def test_global_rigid_motion_invariance(rng):
    o = rng.normal(size=(6, 3))
    feats = rng.normal(size=(6, 4))
    p = rng.normal(size=(5, 3))
    q = Rotation.random(random_state=7).as_matrix()
    t = np.array([0.3, -1.0, 2.0])
    h0 = aggregate_representation(p, build_fields(feats, o, np.broadcast_to(np.eye(3), (6, 3, 3))), 3, 2).data
    f1 = build_fields(feats, o @ q.T + t, np.broadcast_to(q, (6, 3, 3)))
    h1 = aggregate_representation(p @ q.T + t, f1, 3, 2).data
    np.testing.assert_allclose(h1, h0, atol=1e-10)

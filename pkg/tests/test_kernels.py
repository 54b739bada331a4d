import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from transhuman import _kernels as K

needs_numba = pytest.mark.skipif(K.numba is None, reason="numba not installed")


@needs_numba
@pytest.mark.parametrize("seed", range(4))
def test_knn_numba_matches_numpy(seed):
    rng = np.random.default_rng(seed)
    pts, org = rng.normal(size=(300, 3)), rng.normal(size=(40, 3))
    np.testing.assert_array_equal(K._knn_select_nb(pts, org, 7), K.knn_select_np(pts, org, 7))


def test_knn_ties_go_to_lower_index():
    org = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0], [5.0, 0, 0]])
    idx = K.knn_select(np.zeros((1, 3)), org, 3)
    np.testing.assert_array_equal(idx, [[0, 1, 2]])
    np.testing.assert_array_equal(K.knn_select_np(np.zeros((1, 3)), org, 3), [[0, 1, 2]])


@needs_numba
@pytest.mark.parametrize("seed", range(4))
def test_within_grid_brute_numpy_agree(seed):
    rng = np.random.default_rng(seed)
    verts = rng.uniform(-1, 1, (500, 3))
    pts = rng.uniform(-1.5, 1.5, (4000, 3))
    ref = K.within_np(pts, verts, 0.1)
    np.testing.assert_array_equal(K._within_brute_nb(pts, verts, 0.1), ref)
    np.testing.assert_array_equal(K._within_grid_nb(pts, verts, 0.1), ref)
    assert 0 < ref.sum() < len(ref)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 0.3), st.floats(0.01, 0.5))
def test_within_threshold_is_strict(dist, thr):
    verts = np.array([[0.0, 0.0, 0.0], [3.0, 3.0, 3.0]])
    pt = np.array([[dist, 0.0, 0.0]])
    for method in ("grid", "brute"):
        assert K.within_distance(pt, verts, thr, method)[0] == (dist < thr)


@needs_numba
def test_nearest_assign_agree(rng):
    x, c = rng.normal(size=(500, 3)), rng.normal(size=(9, 3))
    np.testing.assert_array_equal(K._nearest_assign_nb(x, c), K.nearest_assign_np(x, c))


def test_within_errors_and_empty():
    with pytest.raises(ValueError):
        K.within_distance(np.zeros((1, 3)), np.zeros((1, 3)), 0.0)
    with pytest.raises(ValueError):
        K.within_distance(np.zeros((1, 3)), np.zeros((1, 3)), 0.1, "octree")
    assert K.within_distance(np.zeros((0, 3)), np.zeros((4, 3)), 0.1).shape == (0,)


def test_ray_capsule_hits_sphere_cap():
    # degenerate capsule (a == b) is a sphere of radius 1 at the origin
    o = np.array([[0.0, 0.0, -5.0], [0.0, 3.0, -5.0]])
    d = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
    t, cid = K.ray_capsules_np(o, d, np.zeros((1, 3)), np.zeros((1, 3)), np.array([1.0]))
    assert cid.tolist() == [0, -1]
    assert abs(t[0] - 4.0) < 1e-12 and np.isinf(t[1])


def test_ray_capsule_cylinder_side():
    a, b = np.array([[0.0, -1.0, 0.0]]), np.array([[0.0, 1.0, 0.0]])
    t, cid = K.ray_capsules_np(np.array([[0.0, 0.2, -3.0]]), np.array([[0.0, 0.0, 1.0]]), a, b, np.array([0.5]))
    assert cid[0] == 0 and abs(t[0] - 2.5) < 1e-12

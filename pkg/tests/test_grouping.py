import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from transhuman import grouping as grp
from transhuman.body import SyntheticBodyConfig, generate_synthetic_body
from transhuman.diffcore import Tensor


def test_singletons_when_tokens_equal_vertices(rng):
    v = rng.normal(size=(25, 3))
    g = grp.kmeans_group(v, 25, seed=0)
    assert sorted(len(c) for c in g.clusters) == [1] * 25
    np.testing.assert_array_equal(g.centroids[g.labels], v)


def test_two_blobs(rng):
    a = rng.normal(scale=1e-3, size=(20, 3))
    b = rng.normal(scale=1e-3, size=(30, 3)) + [10.0, 0, 0]
    g = grp.kmeans_group(np.vstack([a, b]), 2, seed=4)
    assert sorted(map(tuple, (c.tolist() for c in g.clusters))) == [tuple(range(20)), tuple(range(20, 50))]


def test_kmeans_deterministic(rng):
    v = rng.normal(size=(200, 3))
    assert grp.kmeans_group(v, 13, 7).to_dict() == grp.kmeans_group(v, 13, 7).to_dict()


def test_kmeans_bad_counts(rng):
    with pytest.raises(ValueError):
        grp.kmeans_group(rng.normal(size=(5, 3)), 6)


def test_empty_cluster_repair():
    # duplicated points force seeding to pick duplicates and leave clusters empty
    v = np.vstack([np.zeros((10, 3)), np.ones((2, 3))])
    g = grp.kmeans_group(v, 4, seed=0)
    grp.check_partition(g, 12)
    assert min(g.sizes()) >= 1


def test_aggregate_examples(rng):
    g = grp.GroupingDictionary([np.array([0, 1]), np.array([2])], np.zeros((2, 3)))
    np.testing.assert_array_equal(grp.aggregate(np.array([[0.0], [2.0], [5.0]]), g), [[1.0], [5.0]])
    np.testing.assert_array_equal(grp.aggregate(np.full((3, 4), 0.7), g), np.full((2, 4), 0.7))
    perm = grp.GroupingDictionary([np.array([2]), np.array([0]), np.array([1])], np.zeros((3, 3)))
    x = rng.normal(size=(3, 2))
    np.testing.assert_array_equal(grp.aggregate(x, perm), x[[2, 0, 1]])
    t = grp.aggregate(Tensor(x), perm)
    np.testing.assert_array_equal(t.data, x[[2, 0, 1]])


def test_grid_examples():
    g = grp.grid_voxelize_group(np.array([[0.0, 0, 0], [0.05, 0, 0]]), 0.1)
    assert g.n_tokens == 1
    v = np.array([[0.0, 0, 0], [1.0, 0, 0], [0, 2.0, 0]])
    assert grp.grid_voxelize_group(v, 0.5).n_tokens == 3


def test_grid_variance_exceeds_kmeans():
    body = generate_synthetic_body(SyntheticBodyConfig())
    n = grp.default_token_count(body.n_vertices)
    km = grp.kmeans_group(body.canonical_vertices, n, 0)
    grid = grp.grid_voxelize_group(body.canonical_vertices, grp.grid_cell_for_count(body.canonical_vertices, n))
    assert np.var(grid.sizes()) > np.var(km.sizes())


def test_default_token_count():
    assert grp.default_token_count(6890) == 300
    assert grp.default_token_count(1500) == 65
    assert grp.default_token_count(10) == 8


def test_partition_violations():
    g = grp.GroupingDictionary([np.array([0, 1]), np.array([1])], np.zeros((2, 3)))
    with pytest.raises(ValueError):
        grp.check_partition(g, 2)
    with pytest.raises(ValueError):
        grp.check_partition(grp.GroupingDictionary([np.array([0]), np.array([], dtype=int)], np.zeros((2, 3))), 1)


def test_save_load(tmp_path, rng):
    g = grp.kmeans_group(rng.normal(size=(60, 3)), 6, 2)
    grp.save_grouping(g, tmp_path / "g.json")
    back = grp.load_grouping(tmp_path / "g.json")
    assert back.to_dict() == g.to_dict()


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 40), st.integers(0, 10_000))
def test_kmeans_partition_and_centroids(k, seed):
    v = np.random.default_rng(seed).normal(size=(40, 3))
    g = grp.kmeans_group(v, k, seed)
    grp.check_partition(g, 40)
    assert np.abs(grp.aggregate(v, g) - g.centroids).max() < 1e-12

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from transhuman.checks import gradcheck
from transhuman.diffcore import tensor as T
from transhuman.diffcore import (
    MLP, CheckpointError, NetworkConfig, ParamStore, ShapeError, Tensor, adam_step, conv2d,
    load_checkpoint, multi_head_attention, read_arrays, save_checkpoint, write_arrays,
)


def test_matmul_identity(rng):
    a = rng.normal(size=(3, 3))
    np.testing.assert_array_equal(T.matmul(np.eye(3), a).data, a)


def test_softmax_uniform():
    np.testing.assert_allclose(T.softmax(np.zeros(3)).data, [1 / 3] * 3, atol=1e-15)


def test_layer_norm_constant_is_zero():
    out = T.layer_norm(np.full((2, 5), 3.7))
    np.testing.assert_array_equal(out.data, np.zeros((2, 5)))


def test_backward_square():
    x = Tensor([3.0], requires_grad=True)
    T.backward(T.sum_(x * x))
    np.testing.assert_array_equal(x.grad, [6.0])


def test_backward_linear_map(rng):
    a = rng.normal(size=(4, 3))
    x = Tensor(rng.normal(size=3), requires_grad=True)
    T.backward(T.sum_(T.matmul(a, x)))
    np.testing.assert_allclose(x.grad, a.T @ np.ones(4), rtol=1e-14)


def test_backward_needs_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        T.backward(x * 2.0)


def test_grad_accumulates_and_shapes_match(rng):
    x = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    T.backward(T.sum_(x))
    T.backward(T.sum_(x * 2.0))
    assert x.grad.shape == x.shape
    np.testing.assert_array_equal(x.grad, np.full((2, 3), 3.0))


def test_shared_subexpression_topological_order():
    x = Tensor([2.0], requires_grad=True)
    y = x * x
    z = y * y + y  # x^4 + x^2
    T.backward(T.sum_(z))
    np.testing.assert_allclose(x.grad, [4 * 8 + 2 * 2])


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with T.no_grad():
        y = x * 3.0
    assert y.is_leaf and not y.requires_grad


def test_shape_errors():
    with pytest.raises(ShapeError):
        T.add(np.ones((2, 3)), np.ones((4, 3)))
    with pytest.raises(ShapeError):
        T.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ShapeError):
        conv2d(np.ones((1, 2, 4, 4)), np.ones((1, 3, 3, 3)))


@pytest.mark.parametrize("seed", range(5))
def test_mlp_gradcheck(seed):
    rng = np.random.default_rng(seed)
    mlp = MLP(ParamStore(seed), "m", [4, 8, 8, 2])
    assert gradcheck(mlp, [rng.normal(size=(5, 4))], rng, eps=1e-5) < 1e-4


def test_attention_single_token(rng):
    q, k, v = rng.normal(size=(1, 4)), rng.normal(size=(1, 4)), rng.normal(size=(1, 4))
    wo = rng.normal(size=(4, 4))
    out = multi_head_attention(q, k, v, 2, wo)
    np.testing.assert_allclose(out.data, v @ wo, rtol=1e-13)


def test_attention_uniform_when_qk_zero(rng):
    v = rng.normal(size=(5, 4))
    wo = rng.normal(size=(4, 4))
    out = multi_head_attention(np.zeros((3, 4)), np.zeros((5, 4)), v, 2, wo)
    np.testing.assert_allclose(out.data, np.tile(v.mean(axis=0) @ wo, (3, 1)), rtol=1e-12)


def test_attention_key_permutation_invariant(rng):
    q, k, v = rng.normal(size=(3, 4)), rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
    perm = rng.permutation(6)
    a = multi_head_attention(q, k, v, 2).data
    b = multi_head_attention(q, k[perm], v[perm], 2).data
    np.testing.assert_allclose(a, b, atol=1e-14)


def _one_param_store(value, grad):
    store = ParamStore()
    p = store.add("theta", np.array([value]))
    p.grad = np.array([grad])
    return store, p


def test_adam_first_step():
    store, p = _one_param_store(0.0, 1.0)
    adam_step(store, lr=1e-3, betas=(0.9, 0.999), eps=1e-8)
    np.testing.assert_allclose(p.data, [-1e-3 / (1 + 1e-8)], rtol=1e-15)


def test_adam_zero_grad_is_noop():
    store, p = _one_param_store(0.5, 0.0)
    adam_step(store)
    assert p.data[0] == 0.5


def test_adam_moves_against_gradient():
    store, p = _one_param_store(0.0, 2.0)
    adam_step(store)
    first = p.data[0]
    p.grad = np.array([2.0])
    adam_step(store)
    assert 0 > first > p.data[0]


def test_adam_requires_all_grads():
    store = ParamStore()
    store.add("a", np.zeros(2))
    with pytest.raises(ValueError, match="'a'"):
        adam_step(store)


def test_conv_identity_zero_and_box(rng):
    x = rng.normal(size=(1, 1, 5, 6))
    np.testing.assert_array_equal(conv2d(x, np.ones((1, 1, 1, 1))).data, x)
    assert not conv2d(x, np.zeros((2, 1, 3, 3))).data.any()
    const = np.full((1, 1, 6, 6), 0.7)
    np.testing.assert_allclose(conv2d(const, np.full((1, 1, 3, 3), 1 / 9)).data, 0.7, rtol=1e-14)


def test_conv_output_size():
    out = conv2d(np.ones((2, 3, 16, 12)), np.ones((4, 3, 3, 3)), stride=2, pad=1)
    assert out.shape == (2, 4, 8, 6)


def test_network_config_d2():
    cfg = NetworkConfig(d1=32, L2=4)
    assert cfg.d2 == 32 + 6 * 4


def test_param_names_unique():
    store = ParamStore()
    store.zeros("w", (2,))
    with pytest.raises(KeyError):
        store.zeros("w", (2,))


def test_checkpoint_roundtrip(tmp_path, rng):
    store = ParamStore(1)
    store.uniform("a", (3, 4), 4)
    store.uniform("b", (5,), 5)
    for p in store.params.values():
        p.grad = rng.normal(size=p.shape)
    adam_step(store)
    save_checkpoint(tmp_path / "c.thfc", store)
    other = ParamStore(99)
    other.zeros("a", (3, 4))
    other.zeros("b", (5,))
    load_checkpoint(tmp_path / "c.thfc", other)
    assert other.t == store.t == 1
    for n in store.params:
        np.testing.assert_array_equal(other[n].data, store[n].data)
        np.testing.assert_array_equal(other.m[n], store.m[n])
        np.testing.assert_array_equal(other.v[n], store.v[n])


def test_checkpoint_layout(tmp_path):
    write_arrays(tmp_path / "x.thfc", {"w": np.arange(6.0).reshape(2, 3)})
    raw = (tmp_path / "x.thfc").read_bytes()
    assert raw[:4] == b"THFC"
    assert int.from_bytes(raw[4:8], "little") == 1
    assert int.from_bytes(raw[8:12], "little") == 1 and raw[12:13] == b"w"
    assert len(raw) == 8 + 4 + 1 + 4 + 2 * 8 + 6 * 8


def test_checkpoint_errors(tmp_path):
    write_arrays(tmp_path / "x.thfc", {"w": np.ones(4)})
    raw = (tmp_path / "x.thfc").read_bytes()
    (tmp_path / "bad.thfc").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(CheckpointError, match="magic"):
        read_arrays(tmp_path / "bad.thfc")
    (tmp_path / "short.thfc").write_bytes(raw[:-5])
    with pytest.raises(CheckpointError, match="byte"):
        read_arrays(tmp_path / "short.thfc")


def test_checkpoint_shape_mismatch(tmp_path):
    store = ParamStore()
    store.zeros("a", (2,))
    save_checkpoint(tmp_path / "c.thfc", store)
    other = ParamStore()
    other.zeros("a", (3,))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "c.thfc", other)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8))
def test_softmax_is_distribution(xs):
    p = T.softmax(np.array(xs)).data
    assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=1, max_size=8))
def test_softplus_sigmoid_ranges(xs):
    x = np.array(xs)
    assert np.all(T.softplus(x).data >= 0)
    s = T.sigmoid(x).data
    assert np.all((s >= 0) & (s <= 1))

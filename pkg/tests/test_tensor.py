import numpy as np
import pytest

from disencodec import tensor as T
from disencodec.tensor import Tensor

from gradcheck import fd_check


def leaf(rng, shape, scale=1.0):
    return Tensor(scale * rng.standard_normal(shape), requires_grad=True)


def test_add_mul_broadcast_grads():
    rng = np.random.default_rng(0)
    a = leaf(rng, (3, 4))
    b = leaf(rng, (4,))
    fd_check(lambda: T.tsum(T.add(a, b)), [a, b])
    fd_check(lambda: T.tsum(T.mul(a, b)), [a, b])


def test_bias_gradient_is_column_sum():
    a = Tensor(np.arange(12, dtype=float).reshape(3, 4), requires_grad=True)
    b = Tensor(np.zeros(4), requires_grad=True)
    T.tsum(T.mul(T.add(a, b), 2.0)).backward()
    assert np.array_equal(b.grad, np.full(4, 6.0))
    assert np.array_equal(a.grad, np.full((3, 4), 2.0))


def test_div_power_grads():
    rng = np.random.default_rng(1)
    a = Tensor(rng.uniform(0.5, 2.0, (3, 3)), requires_grad=True)
    b = Tensor(rng.uniform(0.5, 2.0, (3, 3)), requires_grad=True)
    fd_check(lambda: T.tsum(T.div(a, b)), [a, b])
    fd_check(lambda: T.tsum(T.power(a, 3)), [a])
    fd_check(lambda: T.tsum(T.power(a, -0.5)), [a])


def test_power_rejects_tensor_exponent():
    a = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(TypeError):
        T.power(a, a)


def test_elementwise_grads():
    rng = np.random.default_rng(2)
    a = leaf(rng, (4, 5))
    pos = Tensor(rng.uniform(0.5, 3.0, (4, 5)), requires_grad=True)
    fd_check(lambda: T.tsum(T.texp(a)), [a])
    fd_check(lambda: T.tsum(T.tlog(pos)), [pos])
    fd_check(lambda: T.tsum(T.tsqrt(pos)), [pos])
    fd_check(lambda: T.tsum(T.tanh(a)), [a])
    fd_check(lambda: T.tsum(T.sigmoid(a)), [a])


def test_kinked_ops_away_from_kink():
    rng = np.random.default_rng(3)
    vals = rng.uniform(0.2, 2.0, (3, 4)) * rng.choice([-1.0, 1.0], (3, 4))
    a = Tensor(vals, requires_grad=True)
    fd_check(lambda: T.tsum(T.tabs(a)), [a])
    fd_check(lambda: T.tsum(T.leaky_relu(a, 0.2)), [a])
    fd_check(lambda: T.tsum(T.clip_min(a, 0.0)), [a])


def test_clip_min_blocks_gradient_below_floor():
    a = Tensor(np.array([-1.0, 2.0]), requires_grad=True)
    out = T.clip_min(a, 0.5)
    assert np.array_equal(out.data, [0.5, 2.0])
    T.tsum(out).backward()
    assert np.array_equal(a.grad, [0.0, 1.0])


def test_leaky_relu_values():
    a = Tensor(np.array([-2.0, 3.0]))
    assert np.array_equal(T.leaky_relu(a, 0.2).data, [-0.4, 3.0])


def test_matmul_grad_and_rank_check():
    rng = np.random.default_rng(4)
    a = leaf(rng, (2, 3))
    b = leaf(rng, (3, 4))
    fd_check(lambda: T.tsum(T.matmul(a, b)), [a, b])
    with pytest.raises(ValueError):
        T.matmul(leaf(rng, (2, 3, 4)), b)


def test_reductions_and_shape_ops():
    rng = np.random.default_rng(5)
    a = leaf(rng, (3, 4, 5))
    fd_check(lambda: T.tsum(a), [a])
    fd_check(lambda: T.tsum(T.mul(T.tsum(a, axis=1), 0.3)), [a])
    fd_check(lambda: T.tsum(T.tmean(a, axis=(0, 2), keepdims=True) ** 2), [a])
    fd_check(lambda: T.tsum(T.reshape(a, (12, 5)) ** 2), [a])
    fd_check(lambda: T.tsum(T.transpose(a, (2, 0, 1)) ** 2), [a])
    fd_check(lambda: T.tsum(T.pad(a, ((1, 0), (2, 2), (0, 0))) ** 2), [a])


def test_mean_matches_numpy():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((7, 3))
    assert np.allclose(T.tmean(Tensor(x), axis=0).data, x.mean(axis=0), atol=1e-15)
    assert np.allclose(T.mean_rows(Tensor(x)).data, x.mean(axis=0, keepdims=True))


def test_concat_grad():
    rng = np.random.default_rng(7)
    a, b = leaf(rng, (2, 3)), leaf(rng, (4, 3))
    fd_check(lambda: T.tsum(T.concat([a, b], axis=0) ** 2), [a, b])


def test_take_slice_grad():
    rng = np.random.default_rng(8)
    a = leaf(rng, (6, 4))
    fd_check(lambda: T.tsum(a[1:4] ** 2), [a])


def test_take_repeated_fancy_indices_accumulate():
    a = Tensor(np.arange(8, dtype=float).reshape(4, 2), requires_grad=True)
    idx = np.array([1, 1, 3])
    T.tsum(T.take(a, idx)).backward()
    expected = np.zeros((4, 2))
    expected[1] = 2.0
    expected[3] = 1.0
    assert np.array_equal(a.grad, expected)


def test_softmax_properties_and_grad():
    rng = np.random.default_rng(9)
    a = leaf(rng, (3, 5))
    s = T.softmax(a, axis=-1)
    assert np.allclose(s.data.sum(axis=-1), 1.0, atol=1e-14)
    shifted = T.softmax(T.add(a, 123.0), axis=-1)
    assert np.allclose(s.data, shifted.data, atol=1e-12)
    w = T.constant(rng.standard_normal((3, 5)))
    fd_check(lambda: T.tsum(T.mul(T.softmax(a, axis=-1), w)), [a])


def test_diamond_graph_sums_uses():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = T.add(T.mul(x, x), T.mul(x, 3.0))
    T.tsum(y).backward()
    assert np.allclose(x.grad, [2 * 2.0 + 3.0])


def test_grad_accumulates_across_backwards_until_zeroed():
    x = Tensor(np.array([1.5]), requires_grad=True)
    T.tsum(T.mul(x, 2.0)).backward()
    T.tsum(T.mul(x, 2.0)).backward()
    assert np.allclose(x.grad, [4.0])
    x.zero_grad()
    assert x.grad is None


def test_no_grad_blocks_recording():
    x = Tensor(np.ones(3), requires_grad=True)
    with T.no_grad():
        y = T.mul(x, 2.0)
    assert y._parents == () and not y.requires_grad
    y2 = T.mul(x, 2.0)
    assert y2.requires_grad


def test_stop_gradient_and_constant_are_detached():
    x = Tensor(np.ones(3), requires_grad=True)
    y = T.tsum(T.mul(T.stop_gradient(x), x))
    y.backward()
    assert np.allclose(x.grad, np.ones(3))
    assert not T.constant([1.0, 2.0]).requires_grad


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        T.mul(x, 2.0).backward()


def test_operator_sugar():
    rng = np.random.default_rng(10)
    a = leaf(rng, (2, 2))
    b = leaf(rng, (2, 2))
    f = lambda: ((a + b) * 2.0 - b / 2.0 + 1.0).sum()
    fd_check(f, [a, b])
    assert np.allclose((1.0 - a).data, 1.0 - a.data)
    assert np.allclose((2.0 / (a + 10.0)).data, 2.0 / (a.data + 10.0))
    assert (-a).data[0, 0] == -a.data[0, 0]
    assert (a @ b).data.shape == (2, 2)

import numpy as np
import pytest

from disencodec import tensor as T
from disencodec import layers as L
from disencodec.tensor import Tensor

from gradcheck import fd_check


def naive_conv2d(x, w, b, st, sf):
    t, f, _ = x.shape
    kt, kf, _, co = w.shape
    fp = (kf - 1) // 2
    xp = np.pad(x, ((kt - 1, 0), (fp, fp), (0, 0)))
    t_out, f_out = (t - 1) // st + 1, (f - 1) // sf + 1
    out = np.zeros((t_out, f_out, co))
    for j in range(t_out):
        for i in range(f_out):
            patch = xp[j * st : j * st + kt, i * sf : i * sf + kf, :]
            out[j, i] = np.tensordot(patch, w, axes=3) + b
    return out


def naive_conv1d(x, w, b, dilation):
    t, _ = x.shape
    k, _, d_out = w.shape
    xp = np.pad(x, (((k - 1) * dilation, 0), (0, 0)))
    out = np.zeros((t, d_out))
    for j in range(t):
        for dt in range(k):
            out[j] += xp[j + dt * dilation] @ w[dt]
    return out + b


def make_conv2d(rng, c_in=2, c_out=3, kt=2, kf=3, st=2, sf=2):
    params = L.ParamTable()
    conv = L.CausalConv2d(params, "c", c_in, c_out, kt, kf, st, sf, rng=rng)
    return params, conv


def test_conv2d_matches_naive():
    rng = np.random.default_rng(0)
    for st, sf, kt, kf in [(1, 1, 1, 1), (1, 2, 2, 3), (2, 2, 2, 3), (2, 2, 3, 5)]:
        params, conv = make_conv2d(rng, kt=kt, kf=kf, st=st, sf=sf)
        x = rng.standard_normal((9, 11, 2))
        got = conv(Tensor(x)).data
        want = naive_conv2d(x, conv.w.data, conv.b.data, st, sf)
        assert got.shape == want.shape
        assert np.allclose(got, want, atol=1e-12)


def test_conv2d_identity_kernel():
    params = L.ParamTable()
    conv = L.CausalConv2d(params, "c", 1, 1, 1, 1, 1, 1,
                          rng=np.random.default_rng(0))
    conv.w.data[:] = 1.0
    x = np.random.default_rng(1).standard_normal((5, 4, 1))
    assert np.array_equal(conv(Tensor(x)).data, x)


def test_conv2d_shapes_and_validation():
    rng = np.random.default_rng(2)
    params, conv = make_conv2d(rng, st=2, sf=2)
    assert conv.out_shape(100, 321) == (50, 161)
    assert conv.out_shape(97, 321) == (49, 161)
    with pytest.raises(ValueError):
        L.CausalConv2d(L.ParamTable(), "c", 1, 1, 2, 2, rng=rng)  # even kf
    with pytest.raises(ValueError):
        L.CausalConv2d(L.ParamTable(), "c", 1, 1, 0, 1, rng=rng)
    with pytest.raises(ValueError):
        conv(Tensor(np.zeros((4, 5, 7))))  # wrong channel count


def test_conv2d_causality_perturbation():
    rng = np.random.default_rng(3)
    params, conv = make_conv2d(rng, st=2)
    x = rng.standard_normal((12, 7, 2))
    base = conv(Tensor(x)).data
    t0 = 7
    xp = x.copy()
    xp[t0:] += rng.standard_normal(xp[t0:].shape)
    pert = conv(Tensor(xp)).data
    unaffected = (t0 + conv.st - 1) // conv.st  # first output reading frame t0
    assert np.array_equal(base[:unaffected], pert[:unaffected])
    assert not np.array_equal(base[unaffected:], pert[unaffected:])


def test_conv2d_gradients():
    rng = np.random.default_rng(4)
    params, conv = make_conv2d(rng, c_in=1, c_out=2, kt=2, kf=3, st=2, sf=2)
    x = Tensor(rng.standard_normal((5, 5, 1)), requires_grad=True)
    fd_check(lambda: T.tsum(conv(x) ** 2), [x, conv.w, conv.b])


def test_streaming_conv2d_matches_batch():
    rng = np.random.default_rng(5)
    params, conv = make_conv2d(rng, st=2, sf=2)
    x = rng.standard_normal((11, 9, 2))
    batch = conv(Tensor(x)).data
    stream = L.StreamingConv2d(conv)
    outs = [y for y in (stream.push(x[t]) for t in range(11)) if y is not None]
    assert len(outs) == batch.shape[0]
    assert np.allclose(np.stack(outs), batch, atol=1e-12)


def test_conv1d_matches_naive_and_streams():
    rng = np.random.default_rng(6)
    params = L.ParamTable()
    conv = L.CausalConv1d(params, "c", 3, 4, k=3, dilation=4, rng=rng)
    x = rng.standard_normal((20, 3))
    got = conv(Tensor(x)).data
    assert np.allclose(got, naive_conv1d(x, conv.w.data, conv.b.data, 4), atol=1e-12)
    stream = L.StreamingConv1d(conv)
    outs = np.concatenate([stream.push(x[t]) for t in range(20)], axis=0)
    assert np.allclose(outs, got, atol=1e-12)


def test_conv1d_gradient():
    rng = np.random.default_rng(7)
    params = L.ParamTable()
    conv = L.CausalConv1d(params, "c", 2, 2, k=3, dilation=2, rng=rng)
    x = Tensor(rng.standard_normal((8, 2)), requires_grad=True)
    fd_check(lambda: T.tsum(conv(x) ** 2), [x, conv.w, conv.b])


def test_tcm_receptive_field_is_31():
    rng = np.random.default_rng(8)
    params = L.ParamTable()
    block = L.TCMBlock(params, "tcm", 3, rng=rng)
    assert block.receptive_field == 31
    x = rng.standard_normal((60, 3))
    base = block(Tensor(x)).data
    t0 = 12
    xp = x.copy()
    xp[t0] += 1.0
    pert = block(Tensor(xp)).data
    diff = np.any(base != pert, axis=1)
    assert not diff[:t0].any()            # causal
    assert not diff[t0 + 31 :].any()      # reach bounded by 31
    assert diff[t0] and diff[t0 + 30]     # both ends of the span move


def test_tcm_gradient_and_residual():
    rng = np.random.default_rng(9)
    params = L.ParamTable()
    block = L.TCMBlock(params, "tcm", 2, dilations=(1, 2), rng=rng)
    x = Tensor(rng.standard_normal((6, 2)), requires_grad=True)
    fd_check(lambda: T.tsum(block(x) ** 2), [x] + [c.w for c in block.convs])
    for conv in block.convs:
        conv.w.data[:] = 0.0
        conv.b.data[:] = 0.0
    assert np.array_equal(block(Tensor(x.data)).data, x.data)


def test_streaming_tcm_matches_batch():
    rng = np.random.default_rng(10)
    params = L.ParamTable()
    block = L.TCMBlock(params, "tcm", 3, rng=rng)
    x = rng.standard_normal((40, 3))
    batch = block(Tensor(x)).data
    stream = L.StreamingTCM(block)
    outs = np.concatenate([stream.push(x[t]) for t in range(40)], axis=0)
    assert np.allclose(outs, batch, atol=1e-12)


def gru_reference(x, h0, wx, wh, bx, bh):
    hdim = h0.shape[1]
    h = h0.copy()
    outs = []
    for t in range(x.shape[0]):
        gx = x[t : t + 1] @ wx + bx
        gh = h @ wh + bh
        r = 1.0 / (1.0 + np.exp(-(gx[:, :hdim] + gh[:, :hdim])))
        z = 1.0 / (1.0 + np.exp(-(gx[:, hdim : 2 * hdim] + gh[:, hdim : 2 * hdim])))
        n = np.tanh(gx[:, 2 * hdim :] + r * gh[:, 2 * hdim :])
        h = (1.0 - z) * n + z * h
        outs.append(h)
    return np.concatenate(outs, axis=0)


def test_gru_matches_reference():
    rng = np.random.default_rng(11)
    params = L.ParamTable()
    gru = L.GRU(params, "g", 3, 5, rng=rng)
    x = rng.standard_normal((12, 3))
    want = gru_reference(x, np.zeros((1, 5)), gru.wx.data, gru.wh.data,
                         gru.bx.data, gru.bh.data)
    assert np.allclose(gru(Tensor(x)).data, want, atol=1e-13)


def test_gru_zero_weights_fixed_point():
    params = L.ParamTable()
    gru = L.GRU(params, "g", 2, 3, rng=np.random.default_rng(0))
    for t in (gru.wx, gru.wh, gru.bx, gru.bh):
        t.data[:] = 0.0
    out = gru(Tensor(np.ones((4, 2))))
    assert np.array_equal(out.data, np.zeros((4, 3)))


def test_gru_gradients():
    rng = np.random.default_rng(12)
    params = L.ParamTable()
    gru = L.GRU(params, "g", 2, 3, rng=rng)
    x = Tensor(rng.standard_normal((5, 2)), requires_grad=True)
    h0 = Tensor(rng.standard_normal((1, 3)), requires_grad=True)
    fd_check(lambda: T.tsum(gru(x, h0) ** 2),
             [x, h0, gru.wx, gru.wh, gru.bx, gru.bh])


def test_streaming_gru_matches_batch():
    rng = np.random.default_rng(13)
    params = L.ParamTable()
    gru = L.GRU(params, "g", 4, 6, rng=rng)
    x = rng.standard_normal((30, 4))
    batch = gru(Tensor(x)).data
    stream = L.StreamingGRU(gru)
    outs = np.concatenate([stream.push(x[t]) for t in range(30)], axis=0)
    assert np.array_equal(outs, batch)


def test_linear_and_bias_init():
    rng = np.random.default_rng(14)
    params = L.ParamTable()
    lin = L.Linear(params, "l", 3, 2, rng=rng, bias_init=1.0)
    assert np.array_equal(lin.b.data, np.ones(2))
    x = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    fd_check(lambda: T.tsum(lin(x) ** 2), [x, lin.w, lin.b])


def test_instance_norm_oracle():
    rng = np.random.default_rng(15)
    x = rng.standard_normal((8, 4))
    inorm = L.InstanceNorm()
    y, mu, var = inorm(Tensor(x))
    assert np.allclose(mu, x.mean(axis=0), atol=1e-15)
    assert np.allclose(var, x.var(axis=0), atol=1e-15)
    want = (x - x.mean(axis=0)) / np.sqrt(x.var(axis=0) + 1e-5)
    assert np.allclose(y.data, want, atol=1e-12)


def test_instance_norm_constant_channel_zeros_out():
    x = np.ones((10, 3)) * np.array([2.0, -1.0, 0.5])
    y, _, _ = L.InstanceNorm()(Tensor(x))
    assert np.allclose(y.data, 0.0, atol=1e-12)


def test_instance_norm_frozen_identity_and_error():
    rng = np.random.default_rng(16)
    x = rng.standard_normal((6, 3))
    inorm = L.InstanceNorm()
    y = inorm(Tensor(x), (np.zeros(3), np.ones(3)))
    assert np.allclose(y.data, x / np.sqrt(1.0 + 1e-5), atol=1e-12)
    with pytest.raises(ValueError):
        inorm.frozen(Tensor(x), None, None)


def test_instance_norm_on_maps_and_grad():
    rng = np.random.default_rng(17)
    x3 = rng.standard_normal((5, 4, 2))
    y, mu, var = L.InstanceNorm()(Tensor(x3))
    assert y.data.shape == x3.shape
    assert np.allclose(mu, x3.reshape(-1, 2).mean(axis=0), atol=1e-15)
    # sum(y**2) is nearly input-independent for a normalizer, so weight the
    # probe to keep the checked gradients O(1)
    w = T.constant(rng.standard_normal(x3.shape))
    xt = Tensor(x3, requires_grad=True)
    fd_check(lambda: T.tsum(T.mul(L.InstanceNorm()(xt)[0], w)), [xt])


def test_zero_stuff_layout_and_grad():
    x = Tensor(np.arange(6, dtype=float).reshape(3, 2, 1), requires_grad=True)
    y = L.zero_stuff(x, 2, 2)
    assert y.data.shape == (6, 3, 1)
    assert np.array_equal(y.data[::2, ::2, 0], x.data[:, :, 0])
    assert y.data.sum() == x.data.sum()  # everything else is zero
    fd_check(lambda: T.tsum(L.zero_stuff(x, 2, 2) ** 2), [x])


def test_param_table_bookkeeping():
    params = L.ParamTable()
    a = params.ensure("a", lambda: np.zeros(2))
    again = params.ensure("a", lambda: np.ones(2))
    assert again is a and np.array_equal(a.data, np.zeros(2))
    params.ensure("frozen", lambda: np.ones(1), trainable=False)
    assert params.names() == ["a", "frozen"]
    assert [n for n, _ in params.trainable_items()] == ["a"]
    assert not params.is_trainable("frozen")
    with pytest.raises(KeyError):
        params.add("a", np.zeros(1))


def test_kaiming_bound():
    rng = np.random.default_rng(18)
    w = L.kaiming_uniform(rng, (1000,), fan_in=9)
    bound = np.sqrt(2.0 / 1.04) * np.sqrt(3.0 / 9)
    assert np.abs(w).max() <= bound
    assert np.abs(w).max() > 0.9 * bound

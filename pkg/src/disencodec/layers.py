"""Causal neural layers over the autodiff tensors.

Layout conventions: 2-D feature maps are (T, F, C); sequences are (T, D).
Every layer is causal along T: output frame t never reads input frames > t
(convolutions are left-padded, recurrences run forward). The frequency axis
uses symmetric padding, so F shrinks as ceil(F/stride) per strided layer.

Layers own no mutable state; weights live in a ParamTable and streaming
state (conv history, GRU hidden) is held by per-session objects.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor, _node


LEAKY_SLOPE = 0.2


class ParamTable:
    """Ordered name -> Tensor map holding every trainable weight."""

    def __init__(self):
        self._entries: dict[str, Tensor] = {}
        self._trainable: dict[str, bool] = {}
        self.strict = False  # when set, ensure() refuses to invent parameters

    def ensure(self, name: str, init_fn, trainable=True) -> Tensor:
        """Bind to an existing entry or create one from init_fn()."""
        if name not in self._entries:
            if self.strict:
                raise KeyError(f"missing parameter: {name}")
            t = Tensor(np.asarray(init_fn(), dtype=np.float64), requires_grad=trainable)
            self._entries[name] = t
            self._trainable[name] = trainable
        return self._entries[name]

    def add(self, name: str, array, trainable=True) -> Tensor:
        if name in self._entries:
            raise KeyError(f"duplicate parameter name: {name}")
        return self.ensure(name, lambda: array, trainable)

    def __contains__(self, name):
        return name in self._entries

    def __getitem__(self, name) -> Tensor:
        return self._entries[name]

    def __len__(self):
        return len(self._entries)

    def names(self):
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def trainable_items(self):
        return [(n, t) for n, t in self._entries.items() if self._trainable[n]]

    def is_trainable(self, name):
        return self._trainable[name]

    def zero_grad(self):
        for t in self._entries.values():
            t.zero_grad()


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, slope=LEAKY_SLOPE):
    gain = np.sqrt(2.0 / (1.0 + slope * slope))
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


# -- convolution plumbing ------------------------------------------------------


def _im2col2d(xp: Tensor, kt, kf, st, sf, t_out, f_out) -> Tensor:
    """Gather (kt, kf) patches of a padded (T, F, C) map into a matrix.

    Output rows are output positions in (t, f) order, columns are
    (dt, df, channel). Backward scatters gradients back per kernel offset,
    which is collision-free because offsets are handled in separate passes.
    """
    c = xp.data.shape[2]
    cols = np.empty((t_out, f_out, kt, kf, c))
    for dt in range(kt):
        for df in range(kf):
            cols[:, :, dt, df, :] = xp.data[
                dt : dt + (t_out - 1) * st + 1 : st,
                df : df + (f_out - 1) * sf + 1 : sf,
                :,
            ]

    def bw(g):
        g = g.reshape(t_out, f_out, kt, kf, c)
        buf = np.zeros_like(xp.data)
        for dt in range(kt):
            for df in range(kf):
                buf[
                    dt : dt + (t_out - 1) * st + 1 : st,
                    df : df + (f_out - 1) * sf + 1 : sf,
                    :,
                ] += g[:, :, dt, df, :]
        xp.accumulate(buf)

    return _node(cols.reshape(t_out * f_out, kt * kf * c), (xp,), bw)


def _im2col1d(xp: Tensor, k, dilation, t_out) -> Tensor:
    """Same as _im2col2d for (T, D) sequences with dilated taps."""
    d = xp.data.shape[1]
    cols = np.empty((t_out, k, d))
    for dt in range(k):
        cols[:, dt, :] = xp.data[dt * dilation : dt * dilation + t_out, :]

    def bw(g):
        g = g.reshape(t_out, k, d)
        buf = np.zeros_like(xp.data)
        for dt in range(k):
            buf[dt * dilation : dt * dilation + t_out, :] += g[:, dt, :]
        xp.accumulate(buf)

    return _node(cols.reshape(t_out, k * d), (xp,), bw)


def zero_stuff(x: Tensor, st: int, sf: int) -> Tensor:
    """Upsample (T, F, C) by zero insertion: T -> T*st (trailing zeros pad the
    last stride period), F -> (F-1)*sf + 1. Used to build transposed convs."""
    t, f, c = x.data.shape
    t_out, f_out = t * st, (f - 1) * sf + 1
    buf = np.zeros((t_out, f_out, c))
    buf[::st, ::sf, :] = x.data

    def bw(g):
        x.accumulate(g[::st, ::sf, :])

    return _node(buf, (x,), bw)


class CausalConv2d:
    """2-D convolution, causal in time (left zero pad) and centered in frequency.

    T_out = ceil(T/stride_t), F_out = ceil(F/stride_f); output frame t depends
    only on input frames <= t*stride_t.
    """

    def __init__(self, params, name, c_in, c_out, kt, kf, st=1, sf=1, rng=None):
        if kt < 1 or st < 1 or sf < 1:
            raise ValueError("kernel and strides must be >= 1")
        if kf % 2 != 1:
            raise ValueError("frequency kernel must be odd for symmetric padding")
        self.kt, self.kf, self.st, self.sf = kt, kf, st, sf
        self.c_in, self.c_out = c_in, c_out
        fan_in = kt * kf * c_in
        self.w = params.ensure(
            f"{name}.w", lambda: kaiming_uniform(rng, (kt, kf, c_in, c_out), fan_in))
        self.b = params.ensure(f"{name}.b", lambda: np.zeros(c_out))

    def out_shape(self, t, f):
        return (t - 1) // self.st + 1, (f - 1) // self.sf + 1

    def __call__(self, x: Tensor) -> Tensor:
        t, f, c = x.data.shape
        if c != self.c_in:
            raise ValueError(f"expected {self.c_in} channels, got {c}")
        t_out, f_out = self.out_shape(t, f)
        fp = (self.kf - 1) // 2
        xp = T.pad(x, ((self.kt - 1, 0), (fp, fp), (0, 0)))
        cols = _im2col2d(xp, self.kt, self.kf, self.st, self.sf, t_out, f_out)
        w2 = T.reshape(self.w, (self.kt * self.kf * self.c_in, self.c_out))
        out = T.matmul(cols, w2)
        out = T.reshape(out, (t_out, f_out, self.c_out))
        return T.add(out, self.b)


class CausalConv1d:
    """Dilated causal convolution on (T, D) sequences, stride 1."""

    def __init__(self, params, name, d_in, d_out, k, dilation=1, rng=None):
        self.k, self.dilation = k, dilation
        self.d_in, self.d_out = d_in, d_out
        self.w = params.ensure(
            f"{name}.w", lambda: kaiming_uniform(rng, (k, d_in, d_out), k * d_in))
        self.b = params.ensure(f"{name}.b", lambda: np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        t = x.data.shape[0]
        xp = T.pad(x, (((self.k - 1) * self.dilation, 0), (0, 0)))
        cols = _im2col1d(xp, self.k, self.dilation, t)
        w2 = T.reshape(self.w, (self.k * self.d_in, self.d_out))
        return T.add(T.matmul(cols, w2), self.b)


class Linear:
    def __init__(self, params, name, d_in, d_out, rng=None, bias_init=0.0):
        self.w = params.ensure(
            f"{name}.w", lambda: kaiming_uniform(rng, (d_in, d_out), d_in))
        self.b = params.ensure(f"{name}.b", lambda: np.full(d_out, float(bias_init)))

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.w), self.b)


class TCMBlock:
    """Stack of dilated causal convolutions with one residual connection.

    Receptive field is 1 + sum((k-1) * dilation); with kernel 3 and dilations
    (1, 2, 4, 8) that is 31 frames.
    """

    def __init__(self, params, name, d, dilations=(1, 2, 4, 8), k=3, rng=None):
        self.convs = [
            CausalConv1d(params, f"{name}.conv{i}", d, d, k, dil, rng)
            for i, dil in enumerate(dilations)
        ]
        self.receptive_field = 1 + sum((k - 1) * dil for dil in dilations)

    def __call__(self, x: Tensor) -> Tensor:
        y = x
        for i, conv in enumerate(self.convs):
            y = conv(y)
            if i < len(self.convs) - 1:
                y = T.leaky_relu(y, LEAKY_SLOPE)
        return T.add(x, y)


def gru_step(x: Tensor, h: Tensor, wx: Tensor, wh: Tensor, bx: Tensor, bh: Tensor) -> Tensor:
    """One fused GRU update; x is (1, D), h is (1, H), weights are (., 3H)
    with gates packed (reset, update, candidate).

    h' = (1 - z) * n + z * h, n = tanh(gx_n + r * gh_n). Fused into a single
    record node to keep per-frame graph overhead flat.
    """
    hdim = h.data.shape[1]
    gx = x.data @ wx.data + bx.data
    gh = h.data @ wh.data + bh.data
    r = T.sigmoid_array(gx[:, :hdim] + gh[:, :hdim])
    z = T.sigmoid_array(gx[:, hdim : 2 * hdim] + gh[:, hdim : 2 * hdim])
    ghn = gh[:, 2 * hdim :]
    n = np.tanh(gx[:, 2 * hdim :] + r * ghn)
    out_data = (1.0 - z) * n + z * h.data

    def bw(g):
        dn = g * (1.0 - z)
        dz = g * (h.data - n)
        dn_pre = dn * (1.0 - n * n)
        dr = dn_pre * ghn
        dz_pre = dz * z * (1.0 - z)
        dr_pre = dr * r * (1.0 - r)
        dgx = np.concatenate([dr_pre, dz_pre, dn_pre], axis=1)
        dgh = np.concatenate([dr_pre, dz_pre, dn_pre * r], axis=1)
        x.accumulate(dgx @ wx.data.T)
        wx.accumulate(x.data.T @ dgx)
        bx.accumulate(dgx.sum(axis=0))
        h.accumulate(dgh @ wh.data.T + g * z)
        wh.accumulate(h.data.T @ dgh)
        bh.accumulate(dgh.sum(axis=0))

    return _node(out_data, (x, h, wx, wh, bx, bh), bw)


class GRU:
    """Single-layer GRU; streaming contract is one frame in, one state out."""

    def __init__(self, params, name, d_in, hidden, rng=None):
        self.d_in, self.hidden = d_in, hidden
        bound = 1.0 / np.sqrt(hidden)

        def u(shape):
            return lambda: rng.uniform(-bound, bound, size=shape)

        self.wx = params.ensure(f"{name}.wx", u((d_in, 3 * hidden)))
        self.wh = params.ensure(f"{name}.wh", u((hidden, 3 * hidden)))
        self.bx = params.ensure(f"{name}.bx", lambda: np.zeros(3 * hidden))
        self.bh = params.ensure(f"{name}.bh", lambda: np.zeros(3 * hidden))

    def initial_state(self) -> Tensor:
        return T.constant(np.zeros((1, self.hidden)))

    def step(self, x_t: Tensor, h: Tensor) -> Tensor:
        return gru_step(x_t, h, self.wx, self.wh, self.bx, self.bh)

    def __call__(self, x: Tensor, h0: Tensor | None = None) -> Tensor:
        """Run a (T, D) sequence from h0 (zeros by default); returns (T, H)."""
        h = h0 if h0 is not None else self.initial_state()
        outs = []
        for t in range(x.data.shape[0]):
            h = self.step(x[t : t + 1], h)
            outs.append(h)
        return T.concat(outs, axis=0)


class InstanceNorm:
    """Per-channel normalization over the time axis (and frequency, for maps).

    Adaptive mode computes the statistics from the input and also returns
    them; frozen mode applies stored statistics and is what streaming
    sessions use after enrollment.
    """

    def __init__(self, eps=1e-5):
        self.eps = eps

    def adaptive(self, x: Tensor):
        """Returns (normalized, mean, var); stats are detached (D,) arrays."""
        shaped = x if x.data.ndim == 2 else T.reshape(
            x, (x.data.shape[0] * x.data.shape[1], x.data.shape[2]))
        mu = T.tmean(shaped, axis=0, keepdims=True)
        centered = T.add(shaped, T.mul(mu, -1.0))
        var = T.tmean(T.mul(centered, centered), axis=0, keepdims=True)
        y = T.div(centered, T.tsqrt(T.add(var, self.eps)))
        if x.data.ndim != 2:
            y = T.reshape(y, x.data.shape)
        return y, mu.data.ravel().copy(), var.data.ravel().copy()

    def frozen(self, x: Tensor, mean: np.ndarray, var: np.ndarray) -> Tensor:
        if mean is None or var is None:
            raise ValueError("frozen instance norm requires stored statistics")
        inv = 1.0 / np.sqrt(np.asarray(var) + self.eps)
        return T.mul(T.add(x, T.constant(-np.asarray(mean))), T.constant(inv))

    def __call__(self, x, state=None):
        """state=None -> adaptive (returns (y, mean, var)); otherwise frozen."""
        if state is None:
            return self.adaptive(x)
        return self.frozen(x, state[0], state[1])


# -- streaming (inference) wrappers -------------------------------------------


class StreamingConv2d:
    """Frame-by-frame runner for a CausalConv2d; numpy only, no recording."""

    def __init__(self, conv: CausalConv2d):
        self.conv = conv
        self.history = None  # last kt-1 input frames, zeros at stream start
        self.pos = 0

    def push(self, frame: np.ndarray):
        """Feed one (F, C) frame; returns an (F_out, C_out) frame or None."""
        c = self.conv
        if self.history is None:
            self.history = np.zeros((c.kt - 1, frame.shape[0], frame.shape[1]))
        window = np.concatenate([self.history, frame[None]], axis=0)
        if c.kt > 1:
            self.history = window[1:]
        emit = self.pos % c.st == 0
        self.pos += 1
        if not emit:
            return None
        fp = (c.kf - 1) // 2
        wp = np.pad(window, ((0, 0), (fp, fp), (0, 0)))
        f_out = (frame.shape[0] - 1) // c.sf + 1
        cols = np.empty((f_out, c.kt * c.kf * c.c_in))
        idx = 0
        for dt in range(c.kt):
            for df in range(c.kf):
                cols[:, idx * c.c_in : (idx + 1) * c.c_in] = wp[
                    dt, df : df + (f_out - 1) * c.sf + 1 : c.sf, :]
                idx += 1
        w2 = c.w.data.reshape(-1, c.c_out)
        return cols @ w2 + c.b.data


class StreamingConv1d:
    def __init__(self, conv: CausalConv1d):
        self.conv = conv
        self.history = None

    def push(self, frame: np.ndarray):
        c = self.conv
        span = (c.k - 1) * c.dilation
        if self.history is None:
            self.history = np.zeros((span, frame.shape[0]))
        window = np.concatenate([self.history, frame[None]], axis=0)
        if span:
            self.history = window[1:]
        taps = np.stack([window[dt * c.dilation] for dt in range(c.k)], axis=0)
        return taps.reshape(1, -1) @ c.w.data.reshape(c.k * c.d_in, c.d_out) + c.b.data


class StreamingTCM:
    def __init__(self, block: TCMBlock):
        self.convs = [StreamingConv1d(c) for c in block.convs]

    def push(self, frame: np.ndarray):
        y = frame[None] if frame.ndim == 1 else frame
        x0 = y
        for i, conv in enumerate(self.convs):
            y = conv.push(y[0])
            if i < len(self.convs) - 1:
                y = np.where(y >= 0, y, LEAKY_SLOPE * y)
        return x0 + y


class StreamingGRU:
    def __init__(self, gru: GRU):
        self.gru = gru
        self.h = np.zeros((1, gru.hidden))

    def push(self, frame: np.ndarray):
        x = frame[None] if frame.ndim == 1 else frame
        hdim = self.gru.hidden
        gx = x @ self.gru.wx.data + self.gru.bx.data
        gh = self.h @ self.gru.wh.data + self.gru.bh.data
        # must stay bit-identical to gru_step
        r = T.sigmoid_array(gx[:, :hdim] + gh[:, :hdim])
        z = T.sigmoid_array(gx[:, hdim : 2 * hdim] + gh[:, hdim : 2 * hdim])
        n = np.tanh(gx[:, 2 * hdim :] + r * gh[:, 2 * hdim :])
        self.h = (1.0 - z) * n + z * self.h
        return self.h

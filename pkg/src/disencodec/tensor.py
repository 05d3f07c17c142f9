"""Reverse-mode automatic differentiation on dense float64 numpy arrays.

Every operation builds a node in an acyclic record; backward() walks the
record in reverse topological order and accumulates gradients with the
chain rule, micrograd-style but vectorized. Gradients are summed across
uses, so a tensor feeding several ops gets the total derivative.

All math is 64-bit. There is no broadcasting beyond what elementwise ops
need (grads of broadcast operands are reduced back to their shape).
"""

from __future__ import annotations

import contextlib

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce gradient g back to `shape` by summing broadcast axes."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += _unbroadcast(g, self.data.shape)

    def zero_grad(self):
        self.grad = None

    # -- graph construction ------------------------------------------------

    def backward(self):
        """Reverse-mode accumulation from this scalar node."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar node")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    # -- operators ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_wrap(other), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other), mul(self, -1.0))

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    # -- method aliases -----------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root: Tensor):
    """Iterative post-order DFS; raises on a cycle (impossible for fresh records)."""
    order, state = [], {}  # id -> 1 visiting, 2 done
    stack = [(root, False)]
    while stack:
        node, emitted = stack.pop()
        nid = id(node)
        if emitted:
            state[nid] = 2
            order.append(node)
            continue
        st = state.get(nid)
        if st == 2:
            continue
        if st == 1:
            raise RuntimeError("cycle in autodiff record")
        state[nid] = 1
        stack.append((node, True))
        for p in node._parents:
            if state.get(id(p)) != 2:
                stack.append((p, False))
    return order


def _node(data: np.ndarray, parents, backward) -> Tensor:
    """Create an op output; record parents/backward only when grads can flow."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def constant(x) -> Tensor:
    """A tensor detached from any record (no gradient flows into it)."""
    return Tensor(np.asarray(x, dtype=np.float64))


def stop_gradient(x: Tensor) -> Tensor:
    return Tensor(x.data)


# -- primitive ops -----------------------------------------------------------


def add(a, b):
    a, b = _wrap(a), _wrap(b)

    def bw(g):
        a.accumulate(g)
        b.accumulate(g)

    return _node(a.data + b.data, (a, b), bw)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)

    def bw(g):
        a.accumulate(g * b.data)
        b.accumulate(g * a.data)

    return _node(a.data * b.data, (a, b), bw)


def div(a, b):
    a, b = _wrap(a), _wrap(b)
    inv = 1.0 / b.data

    def bw(g):
        a.accumulate(g * inv)
        b.accumulate(-g * a.data * inv * inv)

    return _node(a.data * inv, (a, b), bw)


def power(a, exponent):
    a = _wrap(a)
    if not isinstance(exponent, (int, float)):
        raise TypeError("only constant exponents are supported")
    out_data = a.data**exponent

    def bw(g):
        a.accumulate(g * exponent * a.data ** (exponent - 1))

    return _node(out_data, (a,), bw)


def texp(a):
    a = _wrap(a)
    out_data = np.exp(a.data)

    def bw(g):
        a.accumulate(g * out_data)

    return _node(out_data, (a,), bw)


def tlog(a):
    a = _wrap(a)

    def bw(g):
        a.accumulate(g / a.data)

    return _node(np.log(a.data), (a,), bw)


def tsqrt(a):
    a = _wrap(a)
    out_data = np.sqrt(a.data)

    def bw(g):
        a.accumulate(g * 0.5 / out_data)

    return _node(out_data, (a,), bw)


def tabs(a):
    a = _wrap(a)
    sign = np.sign(a.data)

    def bw(g):
        a.accumulate(g * sign)

    return _node(np.abs(a.data), (a,), bw)


def clip_min(a, lo: float):
    """max(a, lo); gradient is blocked where a < lo (values above pass exactly)."""
    a = _wrap(a)
    mask = a.data >= lo

    def bw(g):
        a.accumulate(g * mask)

    return _node(np.where(mask, a.data, lo), (a,), bw)


def tanh(a):
    a = _wrap(a)
    out_data = np.tanh(a.data)

    def bw(g):
        a.accumulate(g * (1.0 - out_data * out_data))

    return _node(out_data, (a,), bw)


def sigmoid_array(x: np.ndarray) -> np.ndarray:
    """Overflow-free logistic: exp only ever sees non-positive arguments."""
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    a = _wrap(a)
    out_data = sigmoid_array(a.data)

    def bw(g):
        a.accumulate(g * out_data * (1.0 - out_data))

    return _node(out_data, (a,), bw)


def leaky_relu(a, slope=0.2):
    a = _wrap(a)
    mask = a.data >= 0

    def bw(g):
        a.accumulate(g * np.where(mask, 1.0, slope))

    return _node(np.where(mask, a.data, slope * a.data), (a,), bw)


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects rank-2 operands")

    def bw(g):
        a.accumulate(g @ b.data.T)
        b.accumulate(a.data.T @ g)

    return _node(a.data @ b.data, (a, b), bw)


def tsum(a, axis=None, keepdims=False):
    a = _wrap(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            a.accumulate(np.broadcast_to(g, a.data.shape))
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            a.accumulate(np.broadcast_to(g, a.data.shape))
    return _node(out_data, (a,), bw)


def tmean(a, axis=None, keepdims=False):
    a = _wrap(a)
    if axis is None:
        n = a.data.size
    else:
        n = a.data.shape[axis] if isinstance(axis, int) else int(
            np.prod([a.data.shape[i] for i in axis]))
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def reshape(a, *shape):
    a = _wrap(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    in_shape = a.data.shape

    def bw(g):
        a.accumulate(g.reshape(in_shape))

    return _node(a.data.reshape(shape), (a,), bw)


def transpose(a, axes=None):
    a = _wrap(a)
    if axes is None:
        axes = tuple(range(a.data.ndim))[::-1]
    inverse = np.argsort(axes)

    def bw(g):
        a.accumulate(g.transpose(inverse))

    return _node(a.data.transpose(axes), (a,), bw)


def concat(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t.accumulate(piece)

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def take(a, key):
    """Indexing/slicing with scatter-add backward."""
    a = _wrap(a)
    out_data = a.data[key]
    parts = key if isinstance(key, tuple) else (key,)
    basic = all(isinstance(p, (slice, int, np.integer)) for p in parts)

    def bw(g):
        buf = np.zeros_like(a.data)
        if basic:  # disjoint targets, assignment is enough
            buf[key] = g.reshape(out_data.shape)
        else:  # fancy indices may repeat
            np.add.at(buf, key, g.reshape(out_data.shape))
        a.accumulate(buf)

    return _node(np.array(out_data), (a,), bw)


def pad(a, widths):
    """Zero padding; widths is a ((before, after), ...) per-axis tuple."""
    a = _wrap(a)
    slices = tuple(slice(w0, w0 + n) for (w0, _), n in zip(widths, a.data.shape))

    def bw(g):
        a.accumulate(g[slices])

    return _node(np.pad(a.data, widths), (a,), bw)


def softmax(a, axis=-1):
    """Softmax along `axis`, computed with a detached max-shift for stability."""
    a = _wrap(a)
    shifted = add(a, constant(-np.max(a.data, axis=axis, keepdims=True)))
    e = texp(shifted)
    return div(e, tsum(e, axis=axis, keepdims=True))


def mean_rows(a):
    """Mean over axis 0, keeping a leading singleton (global temporal pooling)."""
    return tmean(a, axis=0, keepdims=True)

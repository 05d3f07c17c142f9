"""
The numerical substrate
=======================

The whole codec trains on a small reverse-mode autodiff engine over
float64 numpy arrays. Nothing here is codec-specific: record a
computation, call backward on a scalar, read gradients off the leaves.
"""

import numpy as np

from disencodec import tensor as T
from disencodec.layers import GRU, CausalConv2d, Linear, ParamTable

# -- a tiny recorded computation ------------------------------------------

x = T.Tensor(np.array([[1.0, -2.0], [0.5, 3.0]]), requires_grad=True)
y = T.tsum(T.mul(T.tanh(x), x))
y.backward()
print("f(x) = sum(x * tanh(x)) =", float(y.data))
print("df/dx =\n", x.grad)

# check one entry by central differences
h = 1e-6
xp = x.data.copy(); xp[0, 1] += h
xm = x.data.copy(); xm[0, 1] -= h
fd = (np.sum(xp * np.tanh(xp)) - np.sum(xm * np.tanh(xm))) / (2 * h)
print(f"numeric df/dx[0,1] = {fd:.10f}, analytic = {x.grad[0,1]:.10f}")

# -- gradients flow through the real layers --------------------------------

params = ParamTable()
rng = np.random.default_rng(0)
conv = CausalConv2d(params, "conv", 2, 4, kt=2, kf=3, sf=2, rng=rng)
proj = Linear(params, "proj", 4 * 16, 8, rng=rng)
gru = GRU(params, "gru", 8, 8, rng=rng)

feats = T.constant(rng.normal(size=(10, 31, 2)))  # 10 frames, 31 bins
hidden = conv(feats)                               # causal in time
flat = T.reshape(hidden, 10, -1)
seq = gru(proj(flat))
loss = T.tsum(T.mul(seq, seq))
loss.backward()
for name, p in params.trainable_items():
    print(f"{name:10s} grad norm {np.linalg.norm(p.grad):8.3f}")

# -- fit something, to show the loop end to end ----------------------------
# least squares by gradient descent: y = A x, recover x

A = rng.normal(size=(20, 5))
true = rng.normal(size=(5, 1))
target = A @ true
guess = T.Tensor(np.zeros((5, 1)), requires_grad=True)
for step in range(200):
    guess.zero_grad()
    err = T.add(T.matmul(T.constant(A), guess), T.constant(-target))
    sq = T.tsum(T.mul(err, err))
    sq.backward()
    guess.data -= 0.02 * guess.grad
print(f"least squares recovered x with error {np.max(np.abs(guess.data - true)):.2e}")

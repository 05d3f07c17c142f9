"""
Distance-based gumbel-softmax quantization and entropy coding
=============================================================

The rate bottleneck: latent vectors are split into groups, each group
snaps to its nearest codeword, and the codeword choice probabilities give
a differentiable handle on the bitrate. Indices then go through a
canonical huffman code onto the wire.
"""

import numpy as np

from disencodec import huffman
from disencodec import tensor as T
from disencodec.layers import ParamTable
from disencodec.quantizer import (LATENT_RATE, GroupCodebook, entropy_estimate,
                                  gumbel_noise, temperature_at, vq_forward)

rng = np.random.default_rng(7)
params = ParamTable()
cb = GroupCodebook(params, "vq", dim=8, groups=2, k=16, rng=rng)

# -- hard selection is nearest-codeword ------------------------------------

x = T.Tensor(rng.normal(size=(6, 8)), requires_grad=True)
sa, quantized = vq_forward(x, cb)
print("hard indices per frame (2 groups):\n", sa.hard_index)
book0 = cb.tables[0].data
d = ((x.data[:, None, :4] - book0[None]) ** 2).sum(-1)
assert np.array_equal(d.argmin(1), sa.hard_index[:, 0])
print("group 0 matches brute-force nearest codeword:", True)

# straight-through: forward emits codebook rows, backward flows to inputs
# through the soft assignment, so the encoder still gets gradients
loss = T.tsum(T.mul(quantized, quantized))
loss.backward()
print("gradient reached the un-quantized input:", np.abs(x.grad).sum() > 0)

# -- temperature controls how soft the assignment is -----------------------

for step, total in ((0, 100), (40, 100), (80, 100)):
    tau = temperature_at(step, total)
    cb.temperature = tau
    noise = [gumbel_noise(rng, (200, 16)) for _ in range(2)]
    sa_t, _ = vq_forward(T.constant(rng.normal(size=(200, 8))), cb, noise=noise)
    peak = float(np.mean(np.max(sa_t.probs[0].data, axis=1)))
    print(f"step {step:3d}: tau {tau:.2f}, mean max-probability {peak:.3f}")
cb.temperature = 1.0

# -- the entropy estimate is the trainable bitrate -------------------------

sa_big, _ = vq_forward(T.constant(rng.normal(size=(500, 8))), cb)
bits = entropy_estimate(sa_big)
print(f"soft entropy: {float(bits.data):.2f} bits/frame "
      f"-> {float(bits.data) * LATENT_RATE:.0f} bps at {LATENT_RATE:.0f} frames/s")

# -- huffman closes the gap between entropy and wire bits ------------------

counts = np.bincount(sa_big.hard_index[:, 0], minlength=16)
table = huffman.huffman_build(counts)
symbols = rng.choice(16, p=counts / counts.sum(), size=5000)
coded = huffman.encode_bits(symbols, table)
p = counts[counts > 0] / counts.sum()
h = -(p * np.log2(p)).sum()
print(f"empirical entropy {h:.3f} bits/symbol, "
      f"huffman average {len(coded) / len(symbols):.3f} bits/symbol")
decoded, _ = huffman.decode_bits(coded, table, len(symbols))
print("decode(encode(s)) == s:", np.array_equal(decoded, symbols))

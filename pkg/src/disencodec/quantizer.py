"""Vector quantization with distance-based gumbel-softmax selection.

Each input vector is split into G groups; per group, codeword selection
probabilities are softmax(-||x_g - c_k||^2 / tau + gumbel noise). The forward
output is the hard-selected codeword row (bit-exact), while gradients flow
through the softmax-weighted mixture (straight-through). Rate control reads
the soft assignments: the minibatch-mean assignment distribution feeds the
entropy estimate, and the rate loss penalizes deviation from a bps target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import kaiming_uniform
from .tensor import Tensor, _node

LATENT_RATE = 25.0  # latent frames per second after 4x temporal downsampling
_ENTROPY_FLOOR = 1e-12
LN2 = float(np.log(2.0))


@dataclass
class SoftAssignment:
    probs: list  # per group: (N, K) Tensor on the recorded graph
    hard_index: np.ndarray  # (N, G) selected codeword per group

    @property
    def n_vectors(self) -> int:
        return self.hard_index.shape[0]


@dataclass
class RateReport:
    """Entropy-based rate summary; fields may be floats or recorded scalars."""

    H_s: object  # bits per latent frame, speaker branch (0 when untracked)
    H_c: object  # bits per latent frame, content branch
    bps_s: object
    bps_c: object
    target_bps: float

    def as_floats(self):
        def f(v):
            if v is None:
                return 0.0
            return float(v.data) if isinstance(v, Tensor) else float(v)

        return {k: f(getattr(self, k))
                for k in ("H_s", "H_c", "bps_s", "bps_c", "target_bps")}


class GroupCodebook:
    """G codebooks of K x (D/G) codewords plus index usage counts."""

    def __init__(self, params, name, dim, groups, k, rng=None, temperature=1.0):
        if dim % groups != 0:
            raise ValueError("dim must divide evenly into groups")
        self.dim, self.groups, self.k = dim, groups, k
        self.group_dim = dim // groups
        self.temperature = temperature
        self.tables = [
            params.ensure(f"{name}.g{i}.codebook",
                          lambda: kaiming_uniform(rng, (k, self.group_dim),
                                                  self.group_dim))
            for i in range(groups)
        ]
        self.counts = [np.zeros(k, dtype=np.int64) for _ in range(groups)]

    def rows(self, indices: np.ndarray) -> np.ndarray:
        """Hard indices (N, G) -> dequantized vectors (N, dim), no recording."""
        return np.concatenate(
            [self.tables[g].data[indices[:, g]] for g in range(self.groups)], axis=1)

    def accumulate_counts(self, indices: np.ndarray):
        for g in range(self.groups):
            self.counts[g] += np.bincount(indices[:, g], minlength=self.k)

    def reset_counts(self):
        for c in self.counts:
            c[:] = 0


def _straight_through(soft: Tensor, hard_data: np.ndarray) -> Tensor:
    """Emit hard_data in the forward pass; pass gradients to soft unchanged."""

    def bw(g):
        soft.accumulate(g)

    return _node(hard_data.copy(), (soft,), bw)


def gumbel_noise(rng: np.random.Generator, shape):
    return rng.gumbel(size=shape)


def vq_forward(x: Tensor, cb: GroupCodebook, noise=None, hard=True):
    """Quantize (N, dim) vectors; returns (SoftAssignment, (N, dim) Tensor).

    noise is an optional list of (N, K) gumbel samples per group (training);
    inference passes None for deterministic nearest-codeword selection.
    hard=False skips the straight-through override and returns the softmax
    mixture itself; the recorded backward path is identical either way, which
    is what makes the soft graph a valid gradient-check surrogate.
    """
    if cb.temperature <= 0:
        raise ValueError("temperature must be positive")
    n = x.data.shape[0]
    probs_all, hard_all, outs = [], [], []
    for g in range(cb.groups):
        xg = x[:, g * cb.group_dim : (g + 1) * cb.group_dim]
        table = cb.tables[g]
        sq_x = T.tsum(T.mul(xg, xg), axis=1, keepdims=True)
        sq_c = T.tsum(T.mul(table, table), axis=1)
        cross = T.matmul(xg, T.transpose(table))
        d2 = T.add(T.add(sq_x, T.mul(cross, -2.0)), sq_c)
        logits = T.mul(d2, -1.0 / cb.temperature)
        if noise is not None:
            logits = T.add(logits, T.constant(noise[g]))
        probs = T.softmax(logits, axis=1)
        chosen = np.argmax(probs.data, axis=1)
        soft_mix = T.matmul(probs, table)
        outs.append(_straight_through(soft_mix, table.data[chosen]) if hard
                    else soft_mix)
        probs_all.append(probs)
        hard_all.append(chosen)
    quantized = T.concat(outs, axis=1) if len(outs) > 1 else outs[0]
    return SoftAssignment(probs_all, np.stack(hard_all, axis=1)), quantized


def entropy_estimate(assignments) -> Tensor:
    """Bits per latent frame from minibatch-mean soft assignments.

    Accepts one SoftAssignment or a list (e.g. one per clip in the batch);
    the mean distribution is taken over all vectors of all members, then
    H = -sum(q log q) is summed across groups and reported in bits.
    """
    if isinstance(assignments, SoftAssignment):
        assignments = [assignments]
    if not assignments or sum(a.n_vectors for a in assignments) == 0:
        raise ValueError("empty assignment batch")
    groups = len(assignments[0].probs)
    total = T.constant(0.0)
    for g in range(groups):
        stacked = T.concat([a.probs[g] for a in assignments], axis=0)
        q = T.mean_rows(stacked)
        h_nats = T.mul(T.tsum(T.mul(q, T.tlog(T.clip_min(q, _ENTROPY_FLOOR)))), -1.0)
        total = T.add(total, h_nats)
    return T.mul(total, 1.0 / LN2)


def rate_loss(report: RateReport) -> Tensor:
    """|target - bps_c - bps_s| with the speaker term dropped when absent."""
    consumed = report.bps_c
    if report.bps_s is not None:
        consumed = T.add(consumed, report.bps_s)
    return T.tabs(T.add(T.constant(float(report.target_bps)),
                        T.mul(consumed, -1.0)))


def temperature_at(step: int, total_steps: int, start=2.0, end=0.5,
                   anneal_frac=0.8) -> float:
    """Exponential anneal start -> end over the first anneal_frac of steps."""
    cut = max(1, int(total_steps * anneal_frac))
    frac = min(step / cut, 1.0)
    return float(start * (end / start) ** frac)

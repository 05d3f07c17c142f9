"""Adam optimizer over a ParamTable."""

from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, params, lr=4e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self):
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        for name, p in self.params.trainable_items():
            if p.grad is None:
                continue
            g = p.grad
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                self.m[name] = m
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        self.params.zero_grad()

    def state_entries(self):
        """Flat name -> array view of the moment estimates, for checkpoints."""
        out = {"adam.step": np.array([float(self.step_count)])}
        for name, m in self.m.items():
            out[f"adam.m.{name}"] = m
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_state_entries(self, entries):
        if "adam.step" in entries:
            self.step_count = int(entries["adam.step"][0])
        for key, arr in entries.items():
            if key.startswith("adam.m."):
                self.m[key[len("adam.m.") :]] = np.array(arr)
            elif key.startswith("adam.v."):
                self.v[key[len("adam.v.") :]] = np.array(arr)

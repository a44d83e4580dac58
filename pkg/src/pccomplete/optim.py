"""Adam and the learning-rate / loss-weight schedules."""

from __future__ import annotations

import math

import numpy as np


def lr_schedule(epoch: int, base_lr: float, decay: float = 0.7, every: int = 40,
                floor: float = 1e-6) -> float:
    """Step decay by ``decay`` every ``every`` epochs, clipped from below."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return max(base_lr * decay ** (epoch // every), floor)


def lambda_f_schedule(iteration: int, start: float = 0.01, end: float = 1.0,
                      ramp_iters: int = 50000) -> float:
    """Linear ramp of the fine-output loss weight, held at ``end`` afterwards."""
    if iteration <= 0:
        return start
    if iteration >= ramp_iters:
        return end
    return start + (end - start) * (iteration / ramp_iters)


class Adam:
    def __init__(self, params: dict, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1 - b1 ** self.t
        bc2 = 1 - b2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m = b1 * self.m[k] + (1 - b1) * g
            v = b2 * self.v[k] + (1 - b2) * (g * g)
            self.m[k], self.v[k] = m, v
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = (p.data - lr * update).astype(p.data.dtype, copy=False)

    def state(self) -> dict:
        out = {}
        for k in self.params:
            out[f"m/{k}"] = self.m[k]
            out[f"v/{k}"] = self.v[k]
        return out

    def load_state(self, tensors: dict, t: int) -> None:
        for k, p in self.params.items():
            for slot, store in (("m", self.m), ("v", self.v)):
                arr = tensors[f"{slot}/{k}"]
                if arr.shape != p.shape:
                    raise ValueError(f"optimizer state shape mismatch for {k}")
                store[k] = np.array(arr, dtype=p.dtype)
        self.t = int(t)

    def snapshot(self):
        return (self.t, dict(self.m), dict(self.v),
                {k: p.data for k, p in self.params.items()})

    def rollback(self, snap) -> None:
        self.t, m, v, data = snap
        self.m, self.v = dict(m), dict(v)
        for k, p in self.params.items():
            p.data = data[k]


def is_finite(x) -> bool:
    return math.isfinite(float(x))

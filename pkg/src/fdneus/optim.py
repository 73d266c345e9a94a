"""Adam with cosine learning-rate decay over a flat parameter vector."""

from __future__ import annotations

import numpy as np


def cosine_lr(it: int, total: int, lr: float, lr_end: float, warmup: int = 0) -> float:
    if warmup and it < warmup:
        return lr * (it + 1) / warmup
    frac = min(max(it - warmup, 0) / max(total - warmup, 1), 1.0)
    return lr_end + 0.5 * (lr - lr_end) * (1.0 + np.cos(np.pi * frac))


class Adam:
    def __init__(self, n: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-15):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self, params: np.ndarray, grad: np.ndarray, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m *= b1
        self.m += (1 - b1) * grad
        self.v *= b2
        self.v += (1 - b2) * grad * grad
        mhat = self.m / (1 - b1 ** self.t)
        vhat = self.v / (1 - b2 ** self.t)
        params -= (lr * mhat / (np.sqrt(vhat) + self.eps)).astype(params.dtype)

    def state(self) -> dict:
        return {"m": self.m.copy(), "v": self.v.copy(), "t": self.t}

    def load(self, state: dict) -> None:
        self.m[:] = state["m"]
        self.v[:] = state["v"]
        self.t = int(state["t"])

"""Two-layer perceptrons with hand-written reverse-mode gradients."""
from __future__ import annotations

import numpy as np


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_mlp(rng: np.random.Generator, prefix: str, d_in: int, d_hidden: int, d_out: int) -> dict:
    """affine -> ReLU -> affine."""
    return {
        f"{prefix}.W1": glorot(rng, d_in, d_hidden),
        f"{prefix}.b1": np.zeros(d_hidden),
        f"{prefix}.W2": glorot(rng, d_hidden, d_out),
        f"{prefix}.b2": np.zeros(d_out),
    }


def mlp_forward(params: dict, prefix: str, x: np.ndarray):
    pre = x @ params[f"{prefix}.W1"] + params[f"{prefix}.b1"]
    hid = np.maximum(pre, 0.0)
    out = hid @ params[f"{prefix}.W2"] + params[f"{prefix}.b2"]
    return out, (x, pre, hid)


def mlp_backward(params: dict, prefix: str, dout: np.ndarray, cache, grads: dict) -> np.ndarray:
    """Accumulate parameter gradients into ``grads``; return d(input)."""
    x, pre, hid = cache
    grads[f"{prefix}.W2"] += hid.T @ dout
    grads[f"{prefix}.b2"] += dout.sum(axis=0)
    dhid = dout @ params[f"{prefix}.W2"].T
    dpre = dhid * (pre > 0.0)
    grads[f"{prefix}.W1"] += x.T @ dpre
    grads[f"{prefix}.b1"] += dpre.sum(axis=0)
    return dpre @ params[f"{prefix}.W1"].T


class Adam:
    def __init__(self, params: dict, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict) -> None:
        if self.lr == 0:
            return
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k in sorted(params):
            g = grads[k]
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

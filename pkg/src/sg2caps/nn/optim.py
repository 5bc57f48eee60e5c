"""Adam and plain SGD over a list of parameters; both zero grads after stepping."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .engine import Parameter


class Adam:
    def __init__(self, params: Sequence[Parameter], betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        b1, b2 = self.betas
        self.t += 1
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            g[...] = 0.0

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for p, m, v in zip(self.params, self.m, self.v):
            out[f"adam.m.{p.name}"] = m
            out[f"adam.v.{p.name}"] = v
        return out


class SGD:
    def __init__(self, params: Sequence[Parameter]):
        self.params = list(params)

    def step(self, lr: float) -> None:
        for p in self.params:
            p.data -= lr * p.grad
            p.grad[...] = 0.0


def adam_step(params: Sequence[Parameter], lr: float, betas=(0.9, 0.999), eps=1e-8,
              state: Adam | None = None) -> Adam:
    """Apply one Adam update; pass the returned state back in on the next call."""
    if state is None:
        state = Adam(params, betas, eps)
    state.step(lr)
    return state


def make_optimizer(name: str, params: Sequence[Parameter]):
    if name == "adam":
        return Adam(params)
    if name == "sgd":
        return SGD(params)
    raise ValueError(f"unknown optimizer {name!r}")

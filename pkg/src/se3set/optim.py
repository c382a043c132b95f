"""AdamW with a linearly warmed-up cosine learning-rate schedule.

For step ``t = 1, 2, ...`` with gradient ``g``::

    m = b1 m + (1 - b1) g
    v = b2 v + (1 - b2) g^2
    theta -= lr_t * (m / (1 - b1^t) / (sqrt(v / (1 - b2^t)) + eps) + wd * theta)

and ``lr_t`` rises linearly from ``lr / warmup`` to ``lr`` over ``warmup``
steps, then follows half a cosine down to ``min_lr`` at ``total`` steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .autograd import Parameter


def cosine_lr(step: int, total: int, lr: float, warmup: int = 0, min_lr: float = 1e-6) -> float:
    """Learning rate for 1-based ``step``."""
    if lr == 0.0:
        return 0.0
    if warmup > 0 and step <= warmup:
        return lr * step / warmup
    span = max(total - warmup, 1)
    frac = min(max(step - warmup, 0) / span, 1.0)
    return min_lr + 0.5 * (lr - min_lr) * (1.0 + math.cos(math.pi * frac))


@dataclass
class AdamW:
    params: Mapping[str, Parameter]
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-6

    def __post_init__(self):
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self, grads: Mapping[str, np.ndarray], lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        if lr == 0.0:
            return
        for k, p in self.params.items():
            g = grads.get(k)
            if g is None:
                g = np.zeros_like(p.data)
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            update = (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps) + self.weight_decay * p.data
            p.data = p.data - lr * update

    def state(self) -> dict[str, np.ndarray]:
        out = {"step": np.array([float(self.step_count)])}
        for k in self.params:
            out[f"m.{k}"] = self.m[k]
            out[f"v.{k}"] = self.v[k]
        return out

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        self.step_count = int(state["step"][0])
        for k in self.params:
            self.m[k] = np.array(state[f"m.{k}"], dtype=np.float64)
            self.v[k] = np.array(state[f"v.{k}"], dtype=np.float64)

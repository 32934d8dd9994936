"""Adam with global-norm gradient clipping and a cosine-annealed learning rate."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# moment decay constants and schedule floor are conventional defaults, not tuned
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
COSINE_FLOOR = 1e-3


def global_norm(grads) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads))


def clip_by_global_norm(grads, max_norm: float = 1.0):
    """Scale every gradient by ``1 / max(1, ||g||_2 / max_norm)``.

    The norm is taken jointly over all tensors. Returns the clipped list and
    the pre-clip norm.
    """
    norm = global_norm(grads)
    scale = 1.0 / max(1.0, norm / max_norm)
    return [g * scale for g in grads], norm


@dataclass
class CosineSchedule:
    """Learning rate ``eta`` at step 0 falling to ``eta * floor`` at ``total_steps``."""

    eta: float
    total_steps: int
    floor: float = COSINE_FLOOR

    def __call__(self, step: int) -> float:
        t = min(max(step, 0), self.total_steps) / max(self.total_steps, 1)
        lo = self.eta * self.floor
        return lo + 0.5 * (self.eta - lo) * (1.0 + math.cos(math.pi * t))


class Adam:
    def __init__(self, params, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def step(self, grads, lr: float):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value = p.value - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self):
        return {"t": self.t, "m": self.m, "v": self.v}


def clip_and_step(optimizer: Adam, grads, lr: float, max_norm: float = 1.0) -> float:
    """Clip ``grads`` by global norm, apply one optimizer step, return the pre-clip norm."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    clipped, norm = clip_by_global_norm(grads, max_norm)
    optimizer.step(clipped, lr)
    return norm

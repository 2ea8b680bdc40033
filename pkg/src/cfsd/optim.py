"""AdamW with a per-step cosine-annealed learning rate."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np


class NonFiniteGradientError(FloatingPointError):
    pass


def cosine_lr(t: int, total: int, lr_max: float, lr_min: float) -> float:
    if total < 1:
        raise ValueError("total steps must be >= 1")
    if not 0 <= t <= total:
        raise ValueError(f"step {t} outside [0, {total}]")
    return lr_min + (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / total)) / 2.0


@dataclass
class OptState:
    lr_max: float = 1e-5
    lr_min: float = 1e-6
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    total_steps: int = 1
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: list[np.ndarray], **hyper) -> OptState:
        return cls(
            **hyper,
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )

    def current_lr(self) -> float:
        return cosine_lr(min(self.t, self.total_steps), self.total_steps, self.lr_max, self.lr_min)

    def blocks(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"adamw.m.{i}"] = m
            out[f"adamw.v.{i}"] = v
        return out

    def hyper(self) -> dict:
        return {
            "lr_max": self.lr_max,
            "lr_min": self.lr_min,
            "weight_decay": self.weight_decay,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "total_steps": self.total_steps,
            "t": self.t,
        }

    @classmethod
    def from_blocks(cls, hyper: dict, blocks: dict[str, np.ndarray]) -> OptState:
        n = sum(1 for k in blocks if k.startswith("adamw.m."))
        return cls(
            **hyper,
            m=[blocks[f"adamw.m.{i}"] for i in range(n)],
            v=[blocks[f"adamw.v.{i}"] for i in range(n)],
        )


def step(
    params: list[np.ndarray], grads: list[np.ndarray], state: OptState
) -> tuple[list[np.ndarray], OptState]:
    """One AdamW update; inputs are not modified.

    The learning rate is the cosine schedule evaluated at the pre-increment
    step count, so the first update uses ``lr_max``.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state disagree in length")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ValueError(f"param {i}: shape {p.shape} vs grad {g.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for param {i}; step rejected")

    lr = state.current_lr()
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_p.append(p - lr * (update + state.weight_decay * p))
        new_m.append(m)
        new_v.append(v)
    return new_p, replace(state, t=t, m=new_m, v=new_v)

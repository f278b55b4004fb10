"""Adam with bias correction over a ParamSet."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gfte.nn.layers import ParamSet


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(
    params: ParamSet,
    grads: dict,
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """One in-place Adam update of ``params``; returns the advanced state."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {name}")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        state.m[name] = m.astype(p.dtype)
        state.v[name] = v.astype(p.dtype)
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data = (p.data - update).astype(p.dtype)
    return state


class Adam:
    def __init__(self, params: ParamSet, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = AdamState()

    def step(self) -> None:
        adam_step(self.params, self.params.grads(), self.state, self.lr, self.betas[0], self.betas[1], self.eps)

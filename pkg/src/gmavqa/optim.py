"""Adamax: Adam with the second moment replaced by an infinity norm."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class AdamaxState:
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    u: list[np.ndarray] = field(default_factory=list)


def adamax_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], state: AdamaxState) -> None:
    """One in-place update.  A ``None`` gradient counts as zero."""
    if state.lr <= 0:
        raise ValueError(f"learning rate must be positive, got {state.lr}")
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.u = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise ValueError("optimizer state does not match parameter list")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    step = state.lr / (1.0 - b1**state.t)
    for p, g, m, u in zip(params, grads, state.m, state.u):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape or m.shape != g.shape:
            raise ValueError(f"shape mismatch for parameter {p.name!r}: {p.data.shape} vs grad {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        np.maximum(b2 * u, np.abs(g), out=u)
        p.data -= step * m / (u + state.eps)


class Adamax:
    def __init__(self, params: Sequence[Tensor], lr: float = 2e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.state = AdamaxState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = value

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adamax_step(self.params, [p.grad for p in self.params], self.state)

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import Parameter


def mse_loss(pred, target):
    """Return ``(loss, dloss/dpred)`` for the mean of squared differences."""
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss: shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), (2.0 / diff.size) * diff


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr: float = 1e-4

    @classmethod
    def for_param(cls, p: Parameter, **hyper) -> "AdamState":
        return cls(np.zeros_like(p.value), np.zeros_like(p.value), **hyper)


def adam_step(params: list[Parameter], states: list[AdamState]) -> None:
    """In-place Adam update with bias correction, then zero the gradients."""
    if len(states) != len(params):
        raise ValueError(f"missing Adam state: {len(params)} parameters, {len(states)} states")
    for p, s in zip(params, states):
        if s is None or s.m.shape != p.value.shape:
            raise ValueError(f"missing Adam state for parameter {p.name!r}")
        s.t += 1
        g = p.grad
        s.m *= s.beta1
        s.m += (1.0 - s.beta1) * g
        s.v *= s.beta2
        s.v += (1.0 - s.beta2) * (g * g)
        m_hat = s.m / (1.0 - s.beta1**s.t)
        v_hat = s.v / (1.0 - s.beta2**s.t)
        p.value -= (s.lr * m_hat / (np.sqrt(v_hat) + s.eps)).astype(p.value.dtype, copy=False)
        p.zero_grad()


@dataclass
class Adam:
    params: list[Parameter]
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    states: list[AdamState] = field(init=False)

    def __post_init__(self):
        self.states = [
            AdamState.for_param(p, beta1=self.beta1, beta2=self.beta2, eps=self.eps, lr=self.lr)
            for p in self.params
        ]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        adam_step(self.params, self.states)

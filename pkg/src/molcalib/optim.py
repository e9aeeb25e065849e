"""AdamW with decoupled weight decay, and the step-decay learning rate rule.

Decay is applied directly to the parameter update, never folded into the
gradient, so the first and second moment estimates are identical for any
decay strength.  Bias-like parameters are excluded by name.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor


@dataclass(frozen=True)
class StepDecaySchedule:
    """lr(epoch) = initial * factor ** (number of decay epochs <= epoch)."""

    initial_lr: float = 1e-3
    decay_factor: float = 0.1
    decay_epochs: tuple[int, ...] = (80, 160)

    def lr_at(self, epoch: int) -> float:
        drops = sum(1 for e in self.decay_epochs if e <= epoch)
        return self.initial_lr * self.decay_factor ** drops


class AdamW:
    """Decoupled-decay Adam over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0,
                 decay_exclude: frozenset[str] = frozenset({"b_clf"})) -> None:
        if lr <= 0.0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        if not (0.0 <= betas[0] < 1.0 and 0.0 <= betas[1] < 1.0):
            raise ValueError(f"betas must lie in [0, 1), got {betas}")
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.decay_exclude = decay_exclude
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self, lr: float | None = None) -> None:
        """One update; pass `lr` to follow a schedule without mutating state."""
        step_lr = self.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay and name not in self.decay_exclude:
                update = update + self.weight_decay * p.data
            p.data = p.data - step_lr * update

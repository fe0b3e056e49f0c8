"""Adam optimizer and shared training-loop helpers."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class TrainingDivergedError(RuntimeError):
    """Raised when a training loss turns non-finite."""


class Adam:
    """Adam with bias correction; fixed learning rate, no weight decay."""

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params: list[Tensor] = [p for _, p in params] if params and isinstance(params[0], tuple) else list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g
            m_hat = self.m[i] / (1.0 - b1 ** self.t)
            v_hat = self.v[i] / (1.0 - b2 ** self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def check_finite(loss_value: float, context: str):
    if not np.isfinite(loss_value):
        raise TrainingDivergedError(f"{context}: loss is {loss_value}")

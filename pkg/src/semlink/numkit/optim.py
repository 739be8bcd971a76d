"""Rectified Adam.

While the variance-rectification term is undefined (early steps, when the
approximated SMA length rho_t <= 4) the update falls back to the plain
bias-corrected momentum step without the adaptive denominator.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import Param


class RAdam:
    """Holds per-parameter first/second moments and applies one update per step()."""

    def __init__(self, params, lr: float = 1e-5, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self._rho_inf = 2.0 / (1.0 - beta2) - 1.0

    def rectification(self, t: int) -> float | None:
        """Rectification multiplier at step t, or None while undefined."""
        b2 = self.beta2
        rho_t = self._rho_inf - 2.0 * t * b2 ** t / (1.0 - b2 ** t)
        if rho_t <= 4.0:
            return None
        rho_inf = self._rho_inf
        return math.sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
                         / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        r = self.rectification(t)
        for p, m, v in zip(self.params, self.m, self.v):
            if not p.trainable:
                continue
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m[:] = b1 * m + (1.0 - b1) * g
            v[:] = b2 * v + (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1 ** t)
            if r is None:
                p.data -= self.lr * m_hat
            else:
                v_hat = np.sqrt(v / (1.0 - b2 ** t))
                p.data -= self.lr * r * m_hat / (v_hat + self.eps)

    def zero_grads(self) -> None:
        for p in self.params:
            p.grad = np.zeros_like(p.data)


def radam_step(optimizer: RAdam, params=None) -> None:
    """Single optimizer step (params are those the optimizer was built with)."""
    optimizer.step()

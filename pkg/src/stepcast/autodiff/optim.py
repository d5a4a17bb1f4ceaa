"""Adaptive-moment optimizer and global-norm gradient clipping."""

from __future__ import annotations

import numpy as np

from stepcast.autodiff.layers import ParameterSet


class NonFiniteGradientError(FloatingPointError):
    """A gradient contained NaN or inf; training cannot continue."""


def adam_step(value, grad, m, v, t: int, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update. ``t`` is the 1-based step count.

    Returns ``(new_value, new_m, new_v)``.
    """
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return value - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_grad_norm(params: ParameterSet, max_norm: float) -> float:
    """Rescale all gradients so their joint L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    grads = params.grads()
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        for name, p in params.items():
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


class Adam:
    def __init__(self, params: ParameterSet, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.value) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.value) for name, p in params.items()}

    def step(self) -> None:
        grads = self.params.grads()
        bad = [name for name, g in grads.items() if not np.all(np.isfinite(g))]
        if bad:
            raise NonFiniteGradientError(
                f"non-finite gradient at optimizer step {self.t + 1} in: {', '.join(bad)}"
            )
        self.t += 1
        for name, p in self.params.items():
            p.value, self.m[name], self.v[name] = adam_step(
                p.value, grads[name], self.m[name], self.v[name], self.t,
                self.lr, self.beta1, self.beta2, self.eps,
            )

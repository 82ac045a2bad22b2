"""Adam with bias correction over a dict of numpy parameter arrays."""
from __future__ import annotations

import numpy as np


class Adam:
    """``lr_scale`` optionally multiplies the step size of individual parameter blocks."""

    def __init__(self, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 lr_scale: dict | None = None):
        self.lr = lr
        self.lr_scale = dict(lr_scale or {})
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def init_moments(self, params: dict) -> None:
        self.m = {k: np.zeros_like(p) for k, p in params.items()}
        self.v = {k: np.zeros_like(p) for k, p in params.items()}

    def step(self, params: dict, grads: dict) -> None:
        """Update ``params`` in place."""
        if not self.m:
            self.init_moments(params)
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, p in params.items():
            g = grads[k]
            if g.shape != p.shape:
                raise ValueError(f"gradient for {k!r} has shape {g.shape}, parameter {p.shape}")
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p -= self.lr * self.lr_scale.get(k, 1.0) * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)

"""AdamW with decoupled weight decay."""

from __future__ import annotations

import numpy as np

from src.tensors.tensor import Tensor
from src.validation.schemas import TrainConfig


class AdamW:
    """Updates ``params`` in place from gradients keyed by tensor identity."""

    def __init__(self, params: list[Tensor], lr: float, betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {id(p): np.zeros_like(p.data) for p in params}
        self.v = {id(p): np.zeros_like(p.data) for p in params}

    @classmethod
    def from_config(cls, params: list[Tensor], config: TrainConfig) -> AdamW:
        return cls(params, config.learning_rate, (config.beta1, config.beta2), config.eps, config.weight_decay)

    def step(self, grads: dict[Tensor, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p in self.params:
            g = grads.get(p)
            if g is None:
                continue
            key = id(p)
            m = self.m[key] = self.beta1 * self.m[key] + (1.0 - self.beta1) * g
            v = self.v[key] = self.beta2 * self.v[key] + (1.0 - self.beta2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                p.data -= (self.lr * self.weight_decay * p.data).astype(p.dtype)
            p.data -= update.astype(p.dtype)

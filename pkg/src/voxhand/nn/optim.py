from __future__ import annotations

from typing import Iterable

import numpy as np

from ..errors import MissingGradient
from .layers import BatchNorm, Module
from .tensor import Parameter

INIT_SIGMA = 0.005


def adam_step(params: Iterable[Parameter], lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One bias-corrected Adam update; moments live on each Parameter."""
    params = list(params)
    for p in params:
        if p.grad is None:
            raise MissingGradient(f"parameter {p.name or p.shape} has no gradient")
    for p in params:
        g = p.grad
        p.step_count += 1
        t = p.step_count
        p.adam_m *= beta1
        p.adam_m += (1.0 - beta1) * g
        p.adam_v *= beta2
        p.adam_v += (1.0 - beta2) * g * g
        m_hat = p.adam_m / (1.0 - beta1 ** t)
        v_hat = p.adam_v / (1.0 - beta2 ** t)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)


class Adam:
    def __init__(self, params: Iterable[Parameter], lr: float = 3.0e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps

    def step(self) -> None:
        adam_step(self.params, self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def init_normal_(param: Parameter, sigma: float = INIT_SIGMA, rng: np.random.Generator | int = 0) -> None:
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    param.data[...] = rng.normal(0.0, sigma, size=param.shape)


def init_weights(model: Module, sigma: float = INIT_SIGMA, seed: int = 0) -> None:
    """Kernel weights ~ N(0, sigma^2); biases 0; BatchNorm gamma 1, beta 0."""
    rng = np.random.default_rng(seed)
    bn_params = set()
    for m in model.modules():
        if isinstance(m, BatchNorm):
            m.gamma.data[...] = 1.0
            m.beta.data[...] = 0.0
            m.running_mean[...] = 0.0
            m.running_var[...] = 1.0
            bn_params.update((id(m.gamma), id(m.beta)))
    for name, p in model.named_parameters():
        if id(p) in bn_params:
            continue
        if name.endswith("bias"):
            p.data[...] = 0.0
        else:
            init_normal_(p, sigma, rng)

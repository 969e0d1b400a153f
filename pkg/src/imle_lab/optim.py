"""First-order optimizers over leaf tensors."""
from __future__ import annotations

from typing import Iterable

import numpy as np

from .tensor import Tensor


class MissingGradError(RuntimeError):
    pass


class Optimizer:
    def __init__(self, params: Iterable[Tensor], lr: float):
        self.params = [p for p in params]
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.lr = lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def _grads(self) -> list[np.ndarray]:
        missing = [i for i, p in enumerate(self.params) if p.grad is None]
        if missing:
            names = [self.params[i].name or f"#{i}" for i in missing[:5]]
            raise MissingGradError(f"no gradient for parameters {names}; call backward() first")
        return [p.grad for p in self.params]

    def step(self) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    """Plain gradient step: theta <- theta - lr * grad."""

    def step(self) -> None:
        for p, g in zip(self.params, self._grads()):
            p.data -= np.asarray(self.lr * g, dtype=p.dtype)


class Adam(Optimizer):
    """Adam with bias correction (Kingma & Ba)."""

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        grads = self._grads()
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= update.astype(p.dtype)

    def state_dict(self) -> dict:
        return {"t": self.t, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}


def make_optimizer(kind: str, params, lr: float, betas=(0.9, 0.999)) -> Optimizer:
    if kind == "adam":
        return Adam(params, lr=lr, betas=betas)
    if kind == "sgd":
        return SGD(params, lr=lr)
    raise ValueError(f"unknown optimizer {kind!r} (expected 'adam' or 'sgd')")

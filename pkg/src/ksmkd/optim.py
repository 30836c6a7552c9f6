"""Gradient-descent optimizers operating in place on :class:`Parameter` lists."""
from __future__ import annotations

from typing import Iterable

import numpy as np

from .tensor import Parameter


class OptimizerUsageError(RuntimeError):
    """Raised when ``step`` is called before gradients exist."""


class Optimizer:
    def __init__(self, params: Iterable[Parameter], lr: float):
        self.params = list(params)
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.lr = float(lr)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def _grads(self) -> list[np.ndarray]:
        missing = [i for i, p in enumerate(self.params) if p.grad is None]
        if missing:
            raise OptimizerUsageError(f"{len(missing)} parameter(s) have no gradient; run backward() first")
        return [p.grad for p in self.params]

    def step(self) -> None:
        grads = self._grads()
        self._update(grads)
        self.zero_grad()

    def _update(self, grads: list[np.ndarray]) -> None:
        raise NotImplementedError

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        pass


class SGD(Optimizer):
    def _update(self, grads):
        for p, g in zip(self.params, grads):
            p.data -= self.lr * g


class Adam(Optimizer):
    def __init__(self, params, lr: float, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def _update(self, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self):
        out = {"t": np.array([self.t], dtype=np.float64)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m.{i}"] = m
            out[f"v.{i}"] = v
        return out

    def load_state_arrays(self, arrays):
        self.t = int(arrays["t"][0])
        for i in range(len(self.params)):
            self.m[i] = np.array(arrays[f"m.{i}"], copy=True)
            self.v[i] = np.array(arrays[f"v.{i}"], copy=True)


def make_optimizer(name: str, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8) -> Optimizer:
    if name == "adam":
        return Adam(params, lr, betas, eps)
    if name == "sgd":
        return SGD(params, lr)
    raise ValueError(f"unknown optimizer {name!r}")


def sgd_adam_step(optimizer: Optimizer) -> None:
    """Apply one update and zero the gradients."""
    optimizer.step()

from __future__ import annotations

import numpy as np

from ..errors import UsageError
from .autodiff import Node


class Adam:
    """Bias-corrected Adam acting in place on a fixed list of parameter nodes."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params: list[Node] = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def step(self, grads=None):
        if grads is None:
            grads = [p.grad if p.grad is not None else np.zeros_like(p.value) for p in self.params]
        if len(grads) != len(self.params):
            raise UsageError("one gradient per parameter expected")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g.shape != p.value.shape:
                raise UsageError(f"gradient shape {g.shape} != parameter shape {p.value.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.value -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def adam_step(params, grads, state: Adam):
    """Functional spelling of :meth:`Adam.step`; ``state`` must own ``params``."""
    if [id(p) for p in params] != [id(p) for p in state.params]:
        raise UsageError("state was built for a different parameter list")
    state.step(grads)
    return params, state

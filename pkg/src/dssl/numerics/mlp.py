from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from . import autodiff as ad


class Mlp:
    """Affine layers with a rectifier between them (none after the last).

    Weights are stored ``d_in x d_out`` so a batch maps as ``X @ W + b``.
    """

    def __init__(self, dims, rng: np.random.Generator | None = None, name: str = "mlp"):
        dims = [int(d) for d in dims]
        if len(dims) < 2 or any(d <= 0 for d in dims):
            raise ConfigError(f"invalid layer dims {dims}")
        self.dims = dims
        self.name = name
        self.layers: list[tuple[ad.Node, ad.Node]] = []
        for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
            if rng is None:
                w = np.zeros((d_in, d_out))
            else:
                limit = np.sqrt(6.0 / (d_in + d_out))
                w = rng.uniform(-limit, limit, size=(d_in, d_out))
            self.layers.append((ad.parameter(w, f"{name}.W{i}"),
                                ad.parameter(np.zeros((1, d_out)), f"{name}.b{i}")))

    @classmethod
    def from_arrays(cls, weights, biases, name="mlp"):
        dims = [weights[0].shape[0]] + [w.shape[1] for w in weights]
        m = cls(dims, None, name)
        for (wn, bn), w, b in zip(m.layers, weights, biases):
            wn.value[...] = w
            bn.value[...] = np.asarray(b).reshape(1, -1)
        return m

    @property
    def d_in(self):
        return self.dims[0]

    @property
    def d_out(self):
        return self.dims[-1]

    @property
    def depth(self):
        return len(self.layers)

    def parameters(self) -> list[ad.Node]:
        return [p for layer in self.layers for p in layer]

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {p.name: p.value for p in self.parameters()}

    def forward(self, x) -> ad.Node:
        h = ad.constant(x)
        if h.shape[1] != self.d_in:
            raise ConfigError(f"{self.name}: expected {self.d_in} input columns, got {h.shape[1]}")
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            h = ad.add(ad.matmul(h, w), b)
            if i < last:
                h = ad.relu(h)
        return h

    __call__ = forward


def mlp_forward(m: Mlp, x) -> ad.Node:
    return m.forward(x)

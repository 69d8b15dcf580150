"""Stack of :class:`LinearLayer` with a linear classification head."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gru import softmax_xent
from .layer import LinearLayer, layer_backward, layer_forward


@dataclass
class Mlp:
    layers: list

    @classmethod
    def init(cls, sizes: list[int], rng: np.random.Generator, norm=None,
             activation: str = "tanh", init_center: float = 0.0) -> "Mlp":
        """Hidden layers get ``norm`` and ``activation``; the last layer emits raw logits."""
        layers = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            layers.append(LinearLayer.init(n_in, n_out, rng, norm=None if last else norm,
                                           activation="identity" if last else activation,
                                           init_center=init_center))
        return cls(layers)

    def params(self) -> dict:
        return {f"l{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.params().items()}

    def forward(self, x):
        caches = []
        for layer in self.layers:
            x, cache = layer_forward(layer, x)
            caches.append(cache)
        return x, caches

    def loss(self, x, labels) -> float:
        logits, _ = self.forward(x)
        return softmax_xent(logits, labels)[0]

    def loss_and_grads(self, x, labels) -> tuple[float, dict]:
        logits, caches = self.forward(x)
        loss, d = softmax_xent(logits, labels)
        grads = {}
        for i in range(len(self.layers) - 1, -1, -1):
            g = layer_backward(caches[i], d)
            for k, v in g.as_dict().items():
                grads[f"l{i}.{k}"] = v
            d = g.d_x
        return loss, grads

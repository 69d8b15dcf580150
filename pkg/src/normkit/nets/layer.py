"""Fully connected layer with optional normalization of its summed inputs."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..normalizers import NormCache, NormalizerKind, normalize, normalize_backward
from ..tensor import ShapeError
from .init import init_weight

ACTIVATIONS = ("tanh", "sigmoid", "relu", "identity", "softmax")


def sigmoid(v):
    return 0.5 + 0.5 * np.tanh(0.5 * v)


def softmax(v):
    e = np.exp(v - np.max(v, axis=-1, keepdims=True))
    return e / np.sum(e, axis=-1, keepdims=True)


def activate(name: str, v: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(v)
    if name == "sigmoid":
        return sigmoid(v)
    if name == "relu":
        return np.maximum(v, 0.0)
    if name == "identity":
        return v
    if name == "softmax":
        return softmax(v)
    raise ValueError(f"unknown activation {name!r}")


def activation_backward(name: str, v: np.ndarray, y: np.ndarray, d_y: np.ndarray) -> np.ndarray:
    """Map ``dL/dy`` to ``dL/dv`` given pre-activation ``v`` and output ``y``."""
    if name == "tanh":
        return d_y * (1.0 - y * y)
    if name == "sigmoid":
        return d_y * y * (1.0 - y)
    if name == "relu":
        return d_y * (v > 0)
    if name == "identity":
        return d_y
    if name == "softmax":
        return y * (d_y - np.sum(d_y * y, axis=-1, keepdims=True))
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class LinearLayer:
    """``y = f(norm(W x) * g + b)``, or ``y = f(W x + b)`` when ``norm`` is None.

    ``W`` has shape ``(n_out, n_in)``; inputs are single vectors or batches
    whose rows are cases.
    """

    W: np.ndarray
    b: np.ndarray
    norm: Optional[NormalizerKind] = None
    gain: Optional[np.ndarray] = None
    activation: str = "tanh"

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        n_out = self.W.shape[0]
        if self.b.shape != (n_out,):
            raise ShapeError(f"bias shape {self.b.shape} does not match {n_out} outputs")
        if self.norm is not None:
            if not self.norm.differentiable:
                raise ValueError(f"{self.norm.label} cannot be used inside a trainable layer")
            self.gain = np.ones(n_out) if self.gain is None else np.asarray(self.gain, dtype=float)
            if self.gain.shape != (n_out,):
                raise ShapeError(f"gain shape {self.gain.shape} does not match {n_out} outputs")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @classmethod
    def init(cls, n_in: int, n_out: int, rng: np.random.Generator, norm=None,
             activation: str = "tanh", init_center: float = 0.0) -> "LinearLayer":
        return cls(init_weight(rng, n_out, n_in, init_center), np.zeros(n_out), norm=norm,
                   activation=activation)

    def params(self) -> dict:
        out = {"W": self.W, "b": self.b}
        if self.norm is not None:
            out["g"] = self.gain
        return out


@dataclass
class LayerCache:
    layer: LinearLayer
    x: np.ndarray
    a: np.ndarray
    v: np.ndarray
    y: np.ndarray
    norm_cache: Optional[NormCache] = None


@dataclass
class LayerGrads:
    d_W: np.ndarray
    d_b: np.ndarray
    d_g: Optional[np.ndarray]
    d_x: np.ndarray
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {"W": self.d_W, "b": self.d_b}
        if self.d_g is not None:
            out["g"] = self.d_g
        return out


def layer_forward(layer: LinearLayer, x) -> tuple[np.ndarray, LayerCache]:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != layer.W.shape[1]:
        raise ShapeError(f"input width {x.shape[-1]} does not match W {layer.W.shape}")
    a = x @ layer.W.T
    norm_cache = None
    if layer.norm is not None:
        normed, norm_cache = normalize(layer.norm, a, layer.gain)
        v = normed + layer.b
    else:
        v = a + layer.b
    y = activate(layer.activation, v)
    return y, LayerCache(layer, x, a, v, y, norm_cache)


def layer_backward(cache: LayerCache, d_y) -> LayerGrads:
    layer = cache.layer
    d_y = np.asarray(d_y, dtype=float)
    if d_y.shape != cache.y.shape:
        raise ShapeError(f"upstream gradient {d_y.shape} vs output {cache.y.shape}")
    d_v = activation_backward(layer.activation, cache.v, cache.y, d_y)
    d_b = d_v.reshape(-1, d_v.shape[-1]).sum(axis=0)
    d_g = None
    if layer.norm is not None:
        d_a, d_g = normalize_backward(cache.norm_cache, layer.gain, d_v)
    else:
        d_a = d_v
    n_out, n_in = layer.W.shape
    d_W = d_a.reshape(-1, n_out).T @ cache.x.reshape(-1, n_in)
    d_x = d_a @ layer.W
    return LayerGrads(d_W, d_b, d_g, d_x)

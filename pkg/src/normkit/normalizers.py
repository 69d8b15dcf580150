"""Normalizer kernels: RMSNorm, pRMSNorm, LayerNorm, L2-Norm, BatchNorm, WeightNorm.

All per-vector normalizers act along the last axis, so a single vector of
shape ``(n,)``, a batch ``(B, n)`` and stacked gates ``(B, G, n)`` go through
the same code.  The gain broadcasts against the trailing axes.  Bias is not
applied here (the layer adds it), except in :func:`batchnorm_forward` which
is a forward-only reference used by the invariance lab.
"""
from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from .tensor import ShapeError

# The stabilizer sits inside the square root.  It is far below float64
# resolution for any non-degenerate input, which keeps the scale-invariance
# identities exact to ~1e-15 while still guarding the all-zero vector.
DEFAULT_EPS = 1e-20


class Variant(str, enum.Enum):
    RMSNORM = "rmsnorm"
    PRMSNORM = "prmsnorm"
    LAYERNORM = "layernorm"
    L2NORM = "l2norm"
    BATCHNORM = "batchnorm"
    WEIGHTNORM = "weightnorm"


_LABELS = {
    Variant.RMSNORM: "RMSNorm",
    Variant.PRMSNORM: "pRMSNorm",
    Variant.LAYERNORM: "LayerNorm",
    Variant.L2NORM: "L2Norm",
    Variant.BATCHNORM: "BatchNorm",
    Variant.WEIGHTNORM: "WeightNorm",
}

DIFFERENTIABLE = frozenset({Variant.RMSNORM, Variant.PRMSNORM, Variant.LAYERNORM, Variant.L2NORM})


@functools.lru_cache(maxsize=1024)
def partial_size(n: int, p: float) -> int:
    """Number of leading elements used by pRMSNorm: ``ceil(n * p)``, at least 1.

    ``p`` goes through its decimal repr so that e.g. ``ceil(30 * 0.1)`` is 3
    and not 4.
    """
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p must lie in (0, 1], got {p}")
    if n < 1:
        raise ShapeError("n must be >= 1")
    k = math.ceil(Fraction(repr(float(p))) * n)
    return min(max(k, 1), n)


@dataclass(frozen=True)
class NormalizerKind:
    variant: Variant
    p: float = 1.0
    epsilon: float = DEFAULT_EPS

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if not 0.0 < self.p <= 1.0:
            raise ValueError(f"p must lie in (0, 1], got {self.p}")
        if self.variant is not Variant.PRMSNORM and self.p != 1.0:
            raise ValueError(f"p is only meaningful for pRMSNorm, not {self.variant.value}")
        if not self.epsilon > 0.0:
            raise ValueError("epsilon must be positive")

    @classmethod
    def rmsnorm(cls, epsilon: float = DEFAULT_EPS) -> "NormalizerKind":
        return cls(Variant.RMSNORM, epsilon=epsilon)

    @classmethod
    def prmsnorm(cls, p: float, epsilon: float = DEFAULT_EPS) -> "NormalizerKind":
        return cls(Variant.PRMSNORM, p=p, epsilon=epsilon)

    @classmethod
    def layernorm(cls, epsilon: float = DEFAULT_EPS) -> "NormalizerKind":
        return cls(Variant.LAYERNORM, epsilon=epsilon)

    @classmethod
    def l2norm(cls, epsilon: float = DEFAULT_EPS) -> "NormalizerKind":
        return cls(Variant.L2NORM, epsilon=epsilon)

    @classmethod
    def batchnorm(cls, epsilon: float = DEFAULT_EPS) -> "NormalizerKind":
        return cls(Variant.BATCHNORM, epsilon=epsilon)

    @classmethod
    def weightnorm(cls, epsilon: float = DEFAULT_EPS) -> "NormalizerKind":
        return cls(Variant.WEIGHTNORM, epsilon=epsilon)

    @property
    def label(self) -> str:
        if self.variant is Variant.PRMSNORM:
            return f"pRMSNorm(p={self.p:g})"
        return _LABELS[self.variant]

    @property
    def differentiable(self) -> bool:
        return self.variant in DIFFERENTIABLE

    def partial_size(self, n: int) -> int:
        return partial_size(n, self.p) if self.variant is Variant.PRMSNORM else n

    def warnings(self, n: int) -> list[str]:
        if self.variant is Variant.PRMSNORM and self.partial_size(n) == 1:
            return [f"{self.label} on n={n} uses a single element for its statistic; "
                    "gradients through it are typically unstable"]
        return []

    def to_dict(self) -> dict:
        return {"variant": self.variant.value, "p": self.p, "epsilon": self.epsilon}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizerKind":
        unknown = set(d) - {"variant", "p", "epsilon"}
        if unknown:
            raise ValueError(f"unknown normalizer fields: {sorted(unknown)}")
        return cls(Variant(d["variant"]), p=float(d.get("p", 1.0)),
                   epsilon=float(d.get("epsilon", DEFAULT_EPS)))

    @classmethod
    def parse(cls, text: str) -> "NormalizerKind":
        """Parse ``rmsnorm``, ``layernorm``, ``prmsnorm:0.0625`` and friends."""
        name, _, arg = text.strip().lower().partition(":")
        if name in ("prmsnorm", "prms"):
            return cls.prmsnorm(float(arg) if arg else 0.0625)
        if arg:
            raise ValueError(f"{name} takes no argument")
        return cls(Variant(name))


@dataclass
class NormParams:
    gain: np.ndarray
    bias: np.ndarray

    @classmethod
    def init(cls, n: int) -> "NormParams":
        return cls(gain=np.ones(n), bias=np.zeros(n))


@dataclass(slots=True)
class NormCache:
    """What a backward pass needs.  ``stat`` is RMS, sigma or L2 norm with a kept last axis."""

    kind: NormalizerKind
    input: np.ndarray
    stat: np.ndarray
    normalized: np.ndarray
    mu: Optional[np.ndarray] = None
    k: Optional[int] = None

    @property
    def rms_or_sigma(self):
        return self.stat[..., 0] if self.stat.ndim > 1 else float(self.stat[0])


def _gain(params) -> np.ndarray:
    return params.gain if isinstance(params, NormParams) else np.asarray(params)


def _check_gain(a: np.ndarray, g: np.ndarray) -> None:
    if g.ndim > a.ndim or a.shape[a.ndim - g.ndim:] != g.shape:
        raise ShapeError(f"gain shape {g.shape} does not match input {a.shape}")


def _reduce_gain_grad(prod: np.ndarray, g: np.ndarray) -> np.ndarray:
    return prod.reshape((-1,) + g.shape).sum(axis=0)


def _squeeze_stat(stat: np.ndarray):
    return float(stat[0]) if stat.ndim == 1 else stat[..., 0]


def rms(a, eps: float = DEFAULT_EPS):
    """Root mean square along the last axis, ``sqrt(mean(a**2) + eps)``."""
    a = np.asarray(a)
    return _squeeze_stat(_prefix_rms(a, a.shape[-1], eps))


def partial_rms(a, p: float, eps: float = DEFAULT_EPS):
    """RMS over the first ``ceil(n * p)`` elements of the last axis."""
    a = np.asarray(a)
    return _squeeze_stat(_prefix_rms(a, partial_size(a.shape[-1], p), eps))


def _prefix_rms(a: np.ndarray, k: int, eps: float) -> np.ndarray:
    head = a[..., :k]
    return np.sqrt((head * head).sum(axis=-1, keepdims=True) / k + eps)


def prmsnorm_forward(a, params, p: float = 1.0, eps: float = DEFAULT_EPS, kind=None):
    a = np.asarray(a)
    g = _gain(params)
    _check_gain(a, g)
    k = a.shape[-1] if p == 1.0 else partial_size(a.shape[-1], p)
    r = _prefix_rms(a, k, eps)
    xhat = a / r
    kind = kind or (NormalizerKind.prmsnorm(p, eps) if p != 1.0 else NormalizerKind.rmsnorm(eps))
    return xhat * g, NormCache(kind, a, r, xhat, k=k)


def rmsnorm_forward(a, params, eps: float = DEFAULT_EPS, kind=None):
    """``out_i = a_i / RMS(a) * g_i``."""
    return prmsnorm_forward(a, params, 1.0, eps, kind=kind or NormalizerKind.rmsnorm(eps))


def prmsnorm_backward(cache: NormCache, params, d_out):
    # d a_j = (u_j - [j < k] * xhat_j * sum_i(u_i xhat_i) / k) / r,  u = g * d_out
    g = _gain(params)
    d_out = np.asarray(d_out)
    if d_out.shape != cache.input.shape:
        raise ShapeError(f"upstream gradient {d_out.shape} vs input {cache.input.shape}")
    xhat, r, k = cache.normalized, cache.stat, cache.k
    u = g * d_out
    proj = (u * xhat).sum(axis=-1, keepdims=True) / k
    n = xhat.shape[-1]
    if k == n:
        d_a = (u - xhat * proj) / r
    else:
        corr = np.zeros_like(xhat)
        corr[..., :k] = xhat[..., :k] * proj
        d_a = (u - corr) / r
    return d_a, _reduce_gain_grad(d_out * xhat, g)


rmsnorm_backward = prmsnorm_backward


def layernorm_forward(a, params, eps: float = DEFAULT_EPS, kind=None):
    """``out_i = (a_i - mu) / sigma * g_i`` with the biased (1/n) variance."""
    a = np.asarray(a)
    g = _gain(params)
    _check_gain(a, g)
    n = a.shape[-1]
    mu = a.sum(axis=-1, keepdims=True) / n
    centered = a - mu
    sigma = np.sqrt((centered * centered).sum(axis=-1, keepdims=True) / n + eps)
    xhat = centered / sigma
    return xhat * g, NormCache(kind or NormalizerKind.layernorm(eps), a, sigma, xhat, mu=mu)


def layernorm_backward(cache: NormCache, params, d_out):
    g = _gain(params)
    d_out = np.asarray(d_out)
    if d_out.shape != cache.input.shape:
        raise ShapeError(f"upstream gradient {d_out.shape} vs input {cache.input.shape}")
    xhat = cache.normalized
    u = g * d_out
    n = u.shape[-1]
    d_a = (u - u.sum(axis=-1, keepdims=True) / n
           - xhat * ((u * xhat).sum(axis=-1, keepdims=True) / n)) / cache.stat
    return d_a, _reduce_gain_grad(d_out * xhat, g)


def l2norm_forward(a, params, eps: float = DEFAULT_EPS, kind=None):
    """``out_i = a_i / ||a||_2 * g_i``."""
    a = np.asarray(a)
    g = _gain(params)
    _check_gain(a, g)
    norm = np.sqrt(np.sum(a * a, axis=-1, keepdims=True) + eps)
    xhat = a / norm
    return xhat * g, NormCache(kind or NormalizerKind.l2norm(eps), a, norm, xhat)


def l2norm_backward(cache: NormCache, params, d_out):
    g = _gain(params)
    d_out = np.asarray(d_out)
    if d_out.shape != cache.input.shape:
        raise ShapeError(f"upstream gradient {d_out.shape} vs input {cache.input.shape}")
    xhat = cache.normalized
    u = g * d_out
    d_a = (u - xhat * np.sum(u * xhat, axis=-1, keepdims=True)) / cache.stat
    return d_a, _reduce_gain_grad(d_out * xhat, g)


def batchnorm_forward(batch, params, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Standardize each column by its batch mean and (biased) std, then gain and bias."""
    batch = np.asarray(batch, dtype=float)
    if batch.ndim != 2 or batch.shape[0] < 2:
        raise ShapeError("batchnorm needs a 2-D batch with at least 2 rows")
    mu = batch.mean(axis=0)
    centered = batch - mu
    sigma = np.sqrt(np.mean(centered * centered, axis=0) + eps)
    return centered / sigma * params.gain + params.bias


def weightnorm_forward(W, gain, x, eps: float = DEFAULT_EPS) -> np.ndarray:
    """``a_i = g_i * (w_i . x) / ||w_i||`` for a single ``x`` or a batch of rows."""
    W = np.asarray(W, dtype=float)
    x = np.asarray(x, dtype=float)
    gain = _gain(gain)
    if W.ndim != 2 or x.shape[-1] != W.shape[1] or gain.shape != (W.shape[0],):
        raise ShapeError(f"weightnorm shapes disagree: W {W.shape}, x {x.shape}, g {gain.shape}")
    row_norm = np.sqrt(np.sum(W * W, axis=1) + eps)
    return (x @ W.T) / row_norm * gain


_FORWARD = {
    Variant.RMSNORM: lambda a, g, kind: prmsnorm_forward(a, g, 1.0, kind.epsilon, kind=kind),
    Variant.PRMSNORM: lambda a, g, kind: prmsnorm_forward(a, g, kind.p, kind.epsilon, kind=kind),
    Variant.LAYERNORM: lambda a, g, kind: layernorm_forward(a, g, kind.epsilon, kind=kind),
    Variant.L2NORM: lambda a, g, kind: l2norm_forward(a, g, kind.epsilon, kind=kind),
}

_BACKWARD = {
    Variant.RMSNORM: prmsnorm_backward,
    Variant.PRMSNORM: prmsnorm_backward,
    Variant.LAYERNORM: layernorm_backward,
    Variant.L2NORM: l2norm_backward,
}


def normalize(kind: NormalizerKind, a, params):
    """Dispatch a per-vector normalizer; returns ``(out, cache)``."""
    if not kind.differentiable:
        raise ValueError(f"{kind.label} is not a per-vector normalizer")
    return _FORWARD[kind.variant](a, params, kind)


def normalize_backward(cache: NormCache, params, d_out):
    """Returns ``(d_a, d_gain)``."""
    return _BACKWARD[cache.kind.variant](cache, params, d_out)

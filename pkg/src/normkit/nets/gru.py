"""GRU cell with per-gate normalization and manual backpropagation through time.

Gate order along the leading axis of the stacked parameters is update (z),
reset (r), candidate (c).  With normalization enabled each gate's summed
input (input path plus recurrent path) is normalized once before its bias
and nonlinearity::

    z  = sigmoid(N(W_z x + U_z h) * g_z + b_z)
    r  = sigmoid(N(W_r x + U_r h) * g_r + b_r)
    c  = tanh(N(W_c x + U_c (r * h)) * g_c + b_c)
    h' = (1 - z) * h + z * c
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..normalizers import NormCache, NormalizerKind, normalize, normalize_backward
from ..tensor import ShapeError
from .init import init_weight
from .layer import sigmoid, softmax

GATES = ("z", "r", "c")


@dataclass
class GruCell:
    W: np.ndarray  # (3, n, m) input weights
    U: np.ndarray  # (3, n, n) recurrent weights
    b: np.ndarray  # (3, n)
    norm: Optional[NormalizerKind] = None
    g: Optional[np.ndarray] = None  # (3, n)

    def __post_init__(self):
        self.W = np.ascontiguousarray(self.W, dtype=float)
        self.U = np.ascontiguousarray(self.U, dtype=float)
        self.b = np.ascontiguousarray(self.b, dtype=float)
        _, n, m = self.W.shape
        if self.W.shape != (3, n, m) or self.U.shape != (3, n, n) or self.b.shape != (3, n):
            raise ShapeError(f"inconsistent GRU shapes W{self.W.shape} U{self.U.shape} b{self.b.shape}")
        if self.norm is not None:
            if not self.norm.differentiable:
                raise ValueError(f"{self.norm.label} cannot be used inside a GRU")
            self.g = np.ones((3, n)) if self.g is None else np.ascontiguousarray(self.g, dtype=float)
            if self.g.shape != (3, n):
                raise ShapeError(f"gain shape {self.g.shape} should be {(3, n)}")

    @classmethod
    def init(cls, n_in: int, n_hidden: int, rng: np.random.Generator, norm=None,
             init_center: float = 0.0) -> "GruCell":
        W = np.stack([init_weight(rng, n_hidden, n_in, init_center) for _ in GATES])
        U = np.stack([init_weight(rng, n_hidden, n_hidden, init_center) for _ in GATES])
        return cls(W, U, np.zeros((3, n_hidden)), norm=norm)

    @property
    def hidden_size(self) -> int:
        return self.W.shape[1]

    @property
    def input_size(self) -> int:
        return self.W.shape[2]

    def params(self) -> dict:
        out = {"W": self.W, "U": self.U, "b": self.b}
        if self.norm is not None:
            out["g"] = self.g
        return out


@dataclass
class StepCache:
    x: np.ndarray
    h_prev: np.ndarray
    z: np.ndarray
    r: np.ndarray
    c: np.ndarray
    rh: np.ndarray
    cand_pre_gain: np.ndarray  # candidate summed input after normalization, before gain
    cand_post_gain: np.ndarray
    zr_cache: Optional[NormCache] = None
    c_cache: Optional[NormCache] = None


def _step(cell: GruCell, xw: np.ndarray, x: np.ndarray, h: np.ndarray) -> tuple[np.ndarray, StepCache]:
    n = cell.hidden_size
    B = h.shape[0]
    a_zr = (xw[:, :2 * n] + h @ cell.U[:2].reshape(2 * n, n).T).reshape(B, 2, n)
    zr_cache = c_cache = None
    if cell.norm is not None:
        o_zr, zr_cache = normalize(cell.norm, a_zr, cell.g[:2])
    else:
        o_zr = a_zr
    zr = sigmoid(o_zr + cell.b[:2])
    z, r = zr[:, 0], zr[:, 1]
    rh = r * h
    a_c = xw[:, 2 * n:] + rh @ cell.U[2].T
    if cell.norm is not None:
        o_c, c_cache = normalize(cell.norm, a_c, cell.g[2])
        pre_gain = c_cache.normalized
    else:
        o_c = pre_gain = a_c
    c = np.tanh(o_c + cell.b[2])
    h_new = h + z * (c - h)
    return h_new, StepCache(x, h, z, r, c, rh, pre_gain, o_c, zr_cache, c_cache)


def _as_batch(arr: np.ndarray, ndim: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == ndim - 1:
        return arr[None], True
    return arr, False


def gru_step(cell: GruCell, x_t, h_prev) -> tuple[np.ndarray, StepCache]:
    """One time step.  ``x_t``/``h_prev`` are single vectors or batches of rows."""
    x, single = _as_batch(x_t, 2)
    h, _ = _as_batch(h_prev, 2)
    if x.shape[-1] != cell.input_size or h.shape[-1] != cell.hidden_size:
        raise ShapeError(f"GRU step got x {x.shape}, h {h.shape}")
    xw = x @ cell.W.reshape(-1, cell.input_size).T
    h_new, cache = _step(cell, xw, x, h)
    return (h_new[0] if single else h_new), cache


def gru_forward(cell: GruCell, xs, h0=None) -> tuple[np.ndarray, list[StepCache]]:
    """Unroll over ``xs`` of shape ``(B, T, m)``; returns hidden states ``(B, T, n)``."""
    xs = np.asarray(xs, dtype=float)
    if xs.ndim != 3 or xs.shape[-1] != cell.input_size:
        raise ShapeError(f"expected (B, T, {cell.input_size}) inputs, got {xs.shape}")
    B, T, m = xs.shape
    n = cell.hidden_size
    h = np.zeros((B, n)) if h0 is None else np.asarray(h0, dtype=float)
    # input projections for every step in one product
    xw_all = (xs.reshape(B * T, m) @ cell.W.reshape(3 * n, m).T).reshape(B, T, 3 * n)
    hs = np.empty((B, T, n))
    caches = []
    for t in range(T):
        h, cache = _step(cell, xw_all[:, t], xs[:, t], h)
        hs[:, t] = h
        caches.append(cache)
    return hs, caches


def gru_backward(cell: GruCell, caches: list[StepCache], d_hs) -> tuple[dict, np.ndarray, np.ndarray]:
    """BPTT.  ``d_hs[:, t]`` is the loss gradient flowing directly into ``h_t``.

    Returns ``(grads, d_h0, d_xs)`` where ``grads`` is keyed like
    :meth:`GruCell.params`.
    """
    d_hs = np.asarray(d_hs, dtype=float)
    if d_hs.ndim != 3:
        raise ShapeError(f"expected (B, T, n) upstream gradients, got {d_hs.shape}")
    B, T, n = d_hs.shape
    if T != len(caches):
        raise ShapeError(f"{T} upstream gradients for {len(caches)} cached steps")
    U_zr = cell.U[:2].reshape(2 * n, n)
    U_c = cell.U[2]
    d_a = np.empty((T, B, 3 * n))
    d_b = np.zeros((3, n))
    d_g = np.zeros((3, n)) if cell.norm is not None else None
    dh = np.zeros((B, n))
    for t in range(T - 1, -1, -1):
        s = caches[t]
        dh = dh + d_hs[:, t]
        dz = dh * (s.c - s.h_prev)
        dv_c = dh * s.z * (1.0 - s.c * s.c)
        dh_prev = dh * (1.0 - s.z)
        d_b[2] += dv_c.sum(axis=0)
        if cell.norm is not None:
            da_c, dg_c = normalize_backward(s.c_cache, cell.g[2], dv_c)
            d_g[2] += dg_c
        else:
            da_c = dv_c
        drh = da_c @ U_c
        dh_prev += drh * s.r
        dv_zr = np.stack([dz * s.z * (1.0 - s.z), drh * s.h_prev * s.r * (1.0 - s.r)], axis=1)
        d_b[:2] += dv_zr.sum(axis=0)
        if cell.norm is not None:
            da_zr, dg_zr = normalize_backward(s.zr_cache, cell.g[:2], dv_zr)
            d_g[:2] += dg_zr
        else:
            da_zr = dv_zr
        da_zr = da_zr.reshape(B, 2 * n)
        dh_prev += da_zr @ U_zr
        d_a[t, :, :2 * n] = da_zr
        d_a[t, :, 2 * n:] = da_c
        dh = dh_prev

    m = cell.input_size
    xs = np.stack([s.x for s in caches])  # (T, B, m)
    hp = np.stack([s.h_prev for s in caches])
    rh = np.stack([s.rh for s in caches])
    flat = d_a.reshape(T * B, 3 * n)
    d_W = (flat.T @ xs.reshape(T * B, m)).reshape(3, n, m)
    d_U = np.empty((3, n, n))
    d_U[:2] = (flat[:, :2 * n].T @ hp.reshape(T * B, n)).reshape(2, n, n)
    d_U[2] = flat[:, 2 * n:].T @ rh.reshape(T * B, n)
    d_xs = (flat @ cell.W.reshape(3 * n, m)).reshape(T, B, m).transpose(1, 0, 2)
    grads = {"W": d_W, "U": d_U, "b": d_b}
    if d_g is not None:
        grads["g"] = d_g
    return grads, dh, d_xs


@dataclass
class GruModel:
    """GRU followed by a linear readout.

    ``head="classify"`` emits logits at every step and is trained with a
    fused softmax cross-entropy over steps whose target is ``>= 0``;
    ``head="regress"`` reads the last hidden state and uses squared error.
    """

    cell: GruCell
    V: np.ndarray
    c: np.ndarray
    head: str = "classify"

    @classmethod
    def init(cls, n_in: int, n_hidden: int, n_out: int, rng: np.random.Generator, norm=None,
             head: str = "classify", init_center: float = 0.0) -> "GruModel":
        cell = GruCell.init(n_in, n_hidden, rng, norm=norm, init_center=init_center)
        V = init_weight(rng, n_out, n_hidden, init_center)
        return cls(cell, V, np.zeros(n_out), head=head)

    def params(self) -> dict:
        out = {f"gru.{k}": v for k, v in self.cell.params().items()}
        out["head.V"] = self.V
        out["head.c"] = self.c
        return out

    def forward(self, xs):
        hs, caches = gru_forward(self.cell, xs)
        if self.head == "classify":
            out = hs @ self.V.T + self.c
        else:
            out = hs[:, -1] @ self.V.T + self.c
        return out, hs, caches

    def loss(self, xs, targets) -> float:
        out, _, _ = self.forward(xs)
        return self._loss(out, targets)[0]

    def _loss(self, out, targets):
        if self.head == "classify":
            return softmax_xent(out, targets)
        diff = out[:, 0] - targets
        return float(np.mean(diff * diff)), (2.0 / diff.size) * diff[:, None]

    def loss_and_grads(self, xs, targets) -> tuple[float, dict]:
        out, hs, caches = self.forward(xs)
        loss, d_out = self._loss(out, targets)
        if self.head == "classify":
            d_V = d_out.reshape(-1, d_out.shape[-1]).T @ hs.reshape(-1, hs.shape[-1])
            d_c = d_out.reshape(-1, d_out.shape[-1]).sum(axis=0)
            d_hs = d_out @ self.V
        else:
            d_V = d_out.T @ hs[:, -1]
            d_c = d_out.sum(axis=0)
            d_hs = np.zeros_like(hs)
            d_hs[:, -1] = d_out @ self.V
        cell_grads, _, _ = gru_backward(self.cell, caches, d_hs)
        grads = {f"gru.{k}": v for k, v in cell_grads.items()}
        grads["head.V"] = d_V
        grads["head.c"] = d_c
        return loss, grads


def softmax_xent(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over entries with ``targets >= 0`` and its logit gradient."""
    targets = np.asarray(targets)
    mask = targets >= 0
    count = int(mask.sum())
    if count == 0:
        raise ValueError("no scored targets")
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    log_z = np.log(np.sum(np.exp(shifted), axis=-1))
    safe = np.where(mask, targets, 0)
    picked = np.take_along_axis(shifted, safe[..., None], axis=-1)[..., 0]
    loss = float(np.sum((log_z - picked)[mask]) / count)
    d = softmax(logits)
    np.put_along_axis(d, safe[..., None], np.take_along_axis(d, safe[..., None], axis=-1) - 1.0, axis=-1)
    d *= mask[..., None] / count
    return loss, d

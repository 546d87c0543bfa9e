"""Transformer building blocks shared by the encoder and the attractor decoder."""
from __future__ import annotations

import numpy as np

from . import numerics as nx
from .numerics import Tensor


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out))


def init_attention(rng, d_model: int, prefix: str) -> dict[str, np.ndarray]:
    p = {}
    for name in ("q", "k", "v", "o"):
        p[f"{prefix}.W{name}"] = glorot(rng, d_model, d_model)
        # no key bias: it shifts all scores of a query equally and cancels in softmax
        if name != "k":
            p[f"{prefix}.b{name}"] = np.zeros(d_model)
    return p


def init_feed_forward(rng, d_model: int, d_ff: int, prefix: str) -> dict[str, np.ndarray]:
    return {
        f"{prefix}.W1": glorot(rng, d_model, d_ff),
        f"{prefix}.b1": np.zeros(d_ff),
        f"{prefix}.W2": glorot(rng, d_ff, d_model),
        f"{prefix}.b2": np.zeros(d_model),
    }


def init_norm(d_model: int, prefix: str) -> dict[str, np.ndarray]:
    return {f"{prefix}.g": np.ones(d_model), f"{prefix}.b": np.zeros(d_model)}


def project_qkv(x: Tensor, p, prefix: str) -> tuple[Tensor, Tensor, Tensor]:
    return tuple(nx.linear(x, p[f"{prefix}.W{n}"], p.get(f"{prefix}.b{n}")) for n in "qkv")


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    *lead, L, D = x.shape
    return nx.swapaxes(nx.reshape(x, (*lead, L, n_heads, D // n_heads)), -3, -2)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, H, L, dh = x.shape
    return nx.reshape(nx.swapaxes(x, -3, -2), (*lead, L, H * dh))


def attend(q: Tensor, k: Tensor, v: Tensor, n_heads: int, mask=None) -> Tensor:
    """Scaled dot-product attention with heads split from the last axis.

    q is ``(..., Lq, D)``, k and v are ``(..., Lk, D)``; returns ``(..., Lq, D)``
    before the output projection.
    """
    qh, kh, vh = (_split_heads(t, n_heads) for t in (q, k, v))
    dh = q.shape[-1] // n_heads
    scores = nx.matmul(qh * (1.0 / np.sqrt(dh)), nx.transpose(kh))
    return _merge_heads(nx.matmul(nx.masked_softmax(scores, mask), vh))


def self_attention(x: Tensor, p, prefix: str, n_heads: int, mask=None) -> Tensor:
    q, k, v = project_qkv(x, p, prefix)
    return nx.linear(attend(q, k, v, n_heads, mask), p[f"{prefix}.Wo"], p[f"{prefix}.bo"])


def feed_forward(x: Tensor, p, prefix: str) -> Tensor:
    h = nx.relu(nx.linear(x, p[f"{prefix}.W1"], p[f"{prefix}.b1"]))
    return nx.linear(h, p[f"{prefix}.W2"], p[f"{prefix}.b2"])


def add_norm(x: Tensor, residual: Tensor, p, prefix: str, eps: float) -> Tensor:
    return nx.layer_norm(nx.add(x, residual), p[f"{prefix}.g"], p[f"{prefix}.b"], eps)


class KVCache:
    """Append-only key/value store along the time axis with amortized growth.

    Arrays are ``(*lead, capacity, d)``; ``keys``/``values`` return views of the
    filled prefix.
    """

    def __init__(self, lead: tuple[int, ...], d_model: int, capacity: int = 64):
        self.lead = tuple(lead)
        self.d_model = d_model
        self._k = np.empty(self.lead + (capacity, d_model))
        self._v = np.empty_like(self._k)
        self.length = 0

    def append(self, k: np.ndarray, v: np.ndarray) -> None:
        if k.shape != self.lead + (1, self.d_model) or v.shape != k.shape:
            raise ValueError(f"cache expects {self.lead + (1, self.d_model)}, got {k.shape}")
        if self.length == self._k.shape[-2]:
            grow = self._k.shape[-2]
            pad = [(0, 0)] * len(self.lead) + [(0, grow), (0, 0)]
            self._k = np.pad(self._k, pad)
            self._v = np.pad(self._v, pad)
        self._k[..., self.length, :] = k[..., 0, :]
        self._v[..., self.length, :] = v[..., 0, :]
        self.length += 1

    @property
    def keys(self) -> np.ndarray:
        return self._k[..., : self.length, :]

    @property
    def values(self) -> np.ndarray:
        return self._v[..., : self.length, :]

    def nbytes(self) -> int:
        return 2 * self.length * int(np.prod(self.lead, dtype=int)) * self.d_model * 8

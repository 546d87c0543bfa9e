"""Causal speaker-embedding encoder.

A frame-wise affine input projection followed by post-norm transformer
blocks whose self-attention is restricted to current and past frames. No
positional encoding is added; the causal mask already makes the blocks
order-sensitive.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers
from . import numerics as nx
from .numerics import Tensor


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int = 345
    d_model: int = 256
    n_heads: int = 4
    n_blocks: int = 4
    d_ff: int = 1024
    ln_eps: float = 1e-5

    def __post_init__(self):
        for name in ("input_dim", "d_model", "n_heads", "n_blocks", "d_ff"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")


def init_params(config: EncoderConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    p = {
        "enc.in.W": layers.glorot(rng, config.input_dim, config.d_model),
        "enc.in.b": np.zeros(config.d_model),
    }
    for i in range(config.n_blocks):
        p.update(layers.init_attention(rng, config.d_model, f"enc.{i}.att"))
        p.update(layers.init_norm(config.d_model, f"enc.{i}.ln1"))
        p.update(layers.init_feed_forward(rng, config.d_model, config.d_ff, f"enc.{i}.ff"))
        p.update(layers.init_norm(config.d_model, f"enc.{i}.ln2"))
    return p


def _block_tail(h: Tensor, att: Tensor, p, i: int, eps: float) -> Tensor:
    h = layers.add_norm(h, att, p, f"enc.{i}.ln1", eps)
    return layers.add_norm(h, layers.feed_forward(h, p, f"enc.{i}.ff"), p, f"enc.{i}.ln2", eps)


def encode(x: Tensor, params, config: EncoderConfig) -> Tensor:
    """Map ``(..., T, F)`` features to ``(..., T, d_model)`` causal embeddings."""
    x = nx.as_tensor(x)
    if x.shape[-1] != config.input_dim:
        raise ValueError(f"feature dim {x.shape[-1]} does not match encoder input_dim {config.input_dim}")
    h = nx.linear(x, params["enc.in.W"], params["enc.in.b"])
    mask = nx.causal_mask(x.shape[-2])
    for i in range(config.n_blocks):
        att = layers.self_attention(h, params, f"enc.{i}.att", config.n_heads, mask)
        h = _block_tail(h, att, params, i, config.ln_eps)
    return h


class EncoderCache:
    """Per-block keys/values of every frame seen so far."""

    def __init__(self, config: EncoderConfig):
        self.config = config
        self.blocks = [layers.KVCache((), config.d_model) for _ in range(config.n_blocks)]

    @property
    def length(self) -> int:
        return self.blocks[0].length if self.blocks else 0

    def nbytes(self) -> int:
        return sum(b.nbytes() for b in self.blocks)


def encode_step(x_t, cache: EncoderCache, params, config: EncoderConfig) -> tuple[np.ndarray, EncoderCache]:
    """Embed one frame given the cache of frames before it; the cache is updated in place."""
    if cache.config != config:
        raise ValueError("encoder cache was built for a different config")
    x_t = np.asarray(x_t, dtype=np.float64).reshape(1, -1)
    if x_t.shape[1] != config.input_dim:
        raise ValueError(f"feature dim {x_t.shape[1]} does not match encoder input_dim {config.input_dim}")
    h = nx.linear(Tensor(x_t), params["enc.in.W"], params["enc.in.b"])
    for i, kv in enumerate(cache.blocks):
        prefix = f"enc.{i}.att"
        q, k, v = layers.project_qkv(h, params, prefix)
        kv.append(k.data, v.data)
        ctx = layers.attend(q, Tensor(kv.keys), Tensor(kv.values), config.n_heads)
        att = nx.linear(ctx, params[f"{prefix}.Wo"], params[f"{prefix}.bo"])
        h = _block_tail(h, att, params, i, config.ln_eps)
    return h.data[0], cache

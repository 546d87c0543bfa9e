"""Non-autoregressive attractor decoder.

The decoder state is a ``(T, n_slots, D)`` grid. Every block runs, in order:

* masked frame self-attention (MFSA): along time for each slot separately,
  causal;
* cross-attractor self-attention (CASA): across slots within each frame;
* a position-wise feed-forward layer;

each wrapped in residual + layer norm. Slot layout matches the labels:
slot 0 is non-speech, slots ``1..s_max`` are speakers, the last slot is the
termination marker.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers
from . import numerics as nx
from .numerics import Tensor

UNIT_NORM_TOL = 1e-6


@dataclass(frozen=True)
class DecoderConfig:
    d_model: int = 256
    n_heads: int = 4
    n_blocks: int = 2
    d_ff: int = 1024
    s_max: int = 4
    casa_first: bool = False
    ln_eps: float = 1e-5

    def __post_init__(self):
        for name in ("d_model", "n_heads", "n_blocks", "d_ff", "s_max"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")

    @property
    def n_slots(self) -> int:
        return self.s_max + 2


def sinusoidal_encoding(n_positions: int, dim: int) -> np.ndarray:
    pos = np.arange(n_positions)[:, None]
    rate = np.exp(-np.log(10000.0) * (np.arange(0, dim, 2) / dim))
    pe = np.zeros((n_positions, dim))
    pe[:, 0::2] = np.sin(pos * rate)
    pe[:, 1::2] = np.cos(pos * rate[: dim // 2])
    return pe


def init_params(config: DecoderConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    D = config.d_model
    p = {"dec.in.W": layers.glorot(rng, 2 * D, D), "dec.in.b": np.zeros(D)}
    for i in range(config.n_blocks):
        p.update(layers.init_attention(rng, D, f"dec.{i}.mfsa"))
        p.update(layers.init_norm(D, f"dec.{i}.ln_mfsa"))
        p.update(layers.init_attention(rng, D, f"dec.{i}.casa"))
        p.update(layers.init_norm(D, f"dec.{i}.ln_casa"))
        p.update(layers.init_feed_forward(rng, D, config.d_ff, f"dec.{i}.ff"))
        p.update(layers.init_norm(D, f"dec.{i}.ln_ff"))
    return p


def build_decoder_input(e: Tensor, params, config: DecoderConfig) -> Tensor:
    """Repeat each embedding over the slots, append the slot encoding, project.

    ``e`` is ``(..., D)``; the result is ``(..., n_slots, D)``.
    """
    e = nx.as_tensor(e)
    S, D = config.n_slots, config.d_model
    lead = e.shape[:-1]
    rep = nx.broadcast_to(nx.reshape(e, (*lead, 1, D)), (*lead, S, D))
    pe = np.broadcast_to(sinusoidal_encoding(S, D), (*lead, S, D))
    return nx.linear(nx.concat([rep, Tensor(pe)], axis=-1), params["dec.in.W"], params["dec.in.b"])


def _casa(h: Tensor, params, i: int, config: DecoderConfig) -> Tensor:
    att = layers.self_attention(h, params, f"dec.{i}.casa", config.n_heads)
    return layers.add_norm(h, att, params, f"dec.{i}.ln_casa", config.ln_eps)


def _ff(h: Tensor, params, i: int, config: DecoderConfig) -> Tensor:
    return layers.add_norm(h, layers.feed_forward(h, params, f"dec.{i}.ff"), params, f"dec.{i}.ln_ff", config.ln_eps)


def check_unit_norm(e: np.ndarray) -> None:
    norms = np.linalg.norm(e, axis=-1)
    if norms.size and np.abs(norms - 1.0).max() > UNIT_NORM_TOL:
        raise ValueError("decoder input embeddings must be unit-norm")


def decode(e: Tensor, params, config: DecoderConfig) -> Tensor:
    """Attractors ``(..., T, n_slots, D)`` from unit-norm embeddings ``(..., T, D)``."""
    e = nx.as_tensor(e)
    check_unit_norm(e.data)
    h = build_decoder_input(e, params, config)
    mask = nx.causal_mask(e.shape[-2])
    for i in range(config.n_blocks):
        if config.casa_first:
            h = _casa(h, params, i, config)
        # slots to the front so attention runs along time
        hs = nx.swapaxes(h, -3, -2)
        att = layers.self_attention(hs, params, f"dec.{i}.mfsa", config.n_heads, mask)
        h = layers.add_norm(h, nx.swapaxes(att, -3, -2), params, f"dec.{i}.ln_mfsa", config.ln_eps)
        if not config.casa_first:
            h = _casa(h, params, i, config)
        h = _ff(h, params, i, config)
    return nx.l2_normalize(h)


class DecoderCache:
    """Per-block MFSA keys/values, one time series per slot."""

    def __init__(self, config: DecoderConfig):
        self.config = config
        self.blocks = [layers.KVCache((config.n_slots,), config.d_model) for _ in range(config.n_blocks)]

    @property
    def length(self) -> int:
        return self.blocks[0].length if self.blocks else 0

    def entries(self) -> int:
        """Cached key vectors per block (frames x slots)."""
        return self.length * self.config.n_slots

    def nbytes(self) -> int:
        return sum(b.nbytes() for b in self.blocks)


def decode_step(e_t, cache: DecoderCache, params, config: DecoderConfig) -> tuple[np.ndarray, DecoderCache]:
    """Attractors ``(n_slots, D)`` for the next frame; updates ``cache`` in place."""
    if cache.config != config:
        raise ValueError("decoder cache was built for a different config")
    e_t = np.asarray(e_t, dtype=np.float64)
    check_unit_norm(e_t)
    h = build_decoder_input(Tensor(e_t), params, config)  # (S, D)
    for i, kv in enumerate(cache.blocks):
        if config.casa_first:
            h = _casa(h, params, i, config)
        prefix = f"dec.{i}.mfsa"
        hs = nx.reshape(h, (config.n_slots, 1, config.d_model))
        q, k, v = layers.project_qkv(hs, params, prefix)
        kv.append(k.data, v.data)
        ctx = layers.attend(q, Tensor(kv.keys), Tensor(kv.values), config.n_heads)
        att = nx.linear(ctx, params[f"{prefix}.Wo"], params[f"{prefix}.bo"])
        att = nx.reshape(att, (config.n_slots, config.d_model))
        h = layers.add_norm(h, att, params, f"dec.{i}.ln_mfsa", config.ln_eps)
        if not config.casa_first:
            h = _casa(h, params, i, config)
        h = _ff(h, params, i, config)
    return nx.l2_normalize(h).data, cache

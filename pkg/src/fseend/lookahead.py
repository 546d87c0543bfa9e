"""Look-ahead convolution over time followed by L2 normalization.

With ``kernel_size=19, left_pad=9, right_pad=9`` each embedding mixes the 9
frames before and after it, so a frame can only be emitted 9 frames after it
arrives. ``right_pad=0`` gives the causal variant.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers
from . import numerics as nx
from .numerics import Tensor


@dataclass(frozen=True)
class LookaheadConfig:
    d_model: int = 256
    kernel_size: int = 19
    left_pad: int = 9
    right_pad: int = 9
    depthwise: bool = False
    frame_period: float = 0.1

    def __post_init__(self):
        if self.kernel_size < 1:
            raise ValueError("kernel_size must be >= 1")
        if self.left_pad < 0 or self.right_pad < 0 or self.left_pad + self.right_pad != self.kernel_size - 1:
            raise ValueError(
                f"inconsistent look-ahead: left_pad {self.left_pad} + right_pad {self.right_pad} "
                f"!= kernel_size {self.kernel_size} - 1"
            )

    @property
    def latency_seconds(self) -> float:
        return self.right_pad * self.frame_period


def init_params(config: LookaheadConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    D, K = config.d_model, config.kernel_size
    if config.depthwise:
        w = rng.uniform(-1.0, 1.0, size=(K, D)) / np.sqrt(K)
    else:
        w = layers.glorot(rng, K * D, D, shape=(K, D, D))
    return {"la.W": w, "la.b": np.zeros(D)}


def lookahead(e: Tensor, params, config: LookaheadConfig) -> Tensor:
    """Convolve ``(..., T, D)`` embeddings over time and unit-normalize every frame."""
    e = nx.as_tensor(e)
    if e.shape[-1] != config.d_model:
        raise ValueError(f"embedding dim {e.shape[-1]} does not match look-ahead d_model {config.d_model}")
    y = nx.conv1d_time(
        e, params["la.W"], config.kernel_size, config.left_pad, config.right_pad, bias=params["la.b"]
    )
    return nx.l2_normalize(y)


class LookaheadBuffer:
    """Ring of the last ``kernel_size`` encoder outputs awaiting convolution."""

    def __init__(self, config: LookaheadConfig):
        self.config = config
        self.ring = np.zeros((config.kernel_size, config.d_model))
        self.frames_in = 0
        self.frames_out = 0
        self.closed = False

    @property
    def pending(self) -> int:
        return self.frames_in - self.frames_out

    def _frame(self, i: int, n_frames: int | None) -> np.ndarray | None:
        if i < 0 or i >= self.frames_in or (n_frames is not None and i >= n_frames):
            return None
        return self.ring[i % self.config.kernel_size]

    def _emit(self, params, n_frames: int | None = None) -> tuple[int, np.ndarray]:
        cfg = self.config
        u = self.frames_out
        w = nx.as_tensor(params["la.W"]).data
        y = np.zeros(cfg.d_model)
        for k in range(cfg.kernel_size):
            x = self._frame(u - cfg.left_pad + k, n_frames)
            if x is None:
                continue
            y += x * w[k] if cfg.depthwise else x @ w[k]
        y = y + nx.as_tensor(params["la.b"]).data
        self.frames_out += 1
        return u, nx.l2_normalize(Tensor(y)).data


def lookahead_step(e_t, buffer: LookaheadBuffer, params, config: LookaheadConfig):
    """Push one encoder output; returns ``(index, embedding)`` once enough future is buffered."""
    if buffer.closed:
        raise RuntimeError("push after flush")
    if buffer.config != config:
        raise ValueError("look-ahead buffer was built for a different config")
    buffer.ring[buffer.frames_in % config.kernel_size] = np.asarray(e_t, dtype=np.float64)
    buffer.frames_in += 1
    if buffer.frames_in - buffer.frames_out > config.right_pad:
        return buffer._emit(params)
    return None


def lookahead_flush(buffer: LookaheadBuffer, params, config: LookaheadConfig) -> list[tuple[int, np.ndarray]]:
    """Emit the remaining frames with zero padding past the end; closes the buffer."""
    if buffer.closed:
        raise RuntimeError("buffer already flushed")
    out = []
    while buffer.frames_out < buffer.frames_in:
        out.append(buffer._emit(params, n_frames=buffer.frames_in))
    buffer.closed = True
    return out

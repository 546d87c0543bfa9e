"""The full model: causal encoder, look-ahead convolution, attractor decoder, activity head."""
from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import numpy as np

from . import decoder, encoder, lookahead, objective
from .numerics import Tensor


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named consumer of the global seed."""
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 345
    d_model: int = 256
    n_heads: int = 4
    d_ff: int | None = None
    n_enc_blocks: int = 4
    n_dec_blocks: int = 2
    s_max: int = 4
    kernel_size: int = 19
    left_pad: int = 9
    right_pad: int = 9
    depthwise: bool = False
    casa_first: bool = False
    frame_period: float = 0.1
    ln_eps: float = 1e-5

    def __post_init__(self):
        # build the sub-configs once so invalid values fail at construction
        self.encoder, self.lookahead, self.decoder  # noqa: B018

    @property
    def ff_dim(self) -> int:
        return self.d_ff if self.d_ff is not None else 4 * self.d_model

    @property
    def n_slots(self) -> int:
        return self.s_max + 2

    @property
    def encoder(self) -> encoder.EncoderConfig:
        return encoder.EncoderConfig(
            self.input_dim, self.d_model, self.n_heads, self.n_enc_blocks, self.ff_dim, self.ln_eps
        )

    @property
    def lookahead(self) -> lookahead.LookaheadConfig:
        return lookahead.LookaheadConfig(
            self.d_model, self.kernel_size, self.left_pad, self.right_pad, self.depthwise, self.frame_period
        )

    @property
    def decoder(self) -> decoder.DecoderConfig:
        return decoder.DecoderConfig(
            self.d_model, self.n_heads, self.n_dec_blocks, self.ff_dim, self.s_max, self.casa_first, self.ln_eps
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


class Forward(NamedTuple):
    embeddings: Tensor  # (..., T, D), unit-norm
    attractors: Tensor  # (..., T, n_slots, D), unit-norm
    posteriors: Tensor  # (..., T, n_slots)


class FSEEND:
    """Parameters plus config; the offline forward pass and stream factory."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "FSEEND":
        p = {}
        p.update(encoder.init_params(config.encoder, rng_stream(seed, "init.encoder")))
        p.update(lookahead.init_params(config.lookahead, rng_stream(seed, "init.lookahead")))
        p.update(decoder.init_params(config.decoder, rng_stream(seed, "init.decoder")))
        return cls(config, p)

    def tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.params.items()}

    def n_parameters(self) -> int:
        return sum(v.size for v in self.params.values())

    def forward(self, x, params: dict[str, Tensor] | None = None) -> Forward:
        cfg = self.config
        params = params if params is not None else self.tensors()
        h = encoder.encode(x, params, cfg.encoder)
        e = lookahead.lookahead(h, params, cfg.lookahead)
        a = decoder.decode(e, params, cfg.decoder)
        return Forward(e, a, objective.activity(a, e))

    def infer(self, x) -> np.ndarray:
        """Offline posteriors ``(T, n_slots)`` for ``(T, F)`` features."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] == 0:
            return np.zeros((0, self.config.n_slots))
        return self.forward(x).posteriors.data

    def embed(self, x) -> np.ndarray:
        """Post-look-ahead unit-norm embeddings ``(T, D)``."""
        cfg = self.config
        params = self.tensors()
        h = encoder.encode(np.asarray(x, dtype=np.float64), params, cfg.encoder)
        return lookahead.lookahead(h, params, cfg.lookahead).data

    def open_stream(self, threshold: float = 0.5):
        from .streaming import StreamState

        return StreamState(self, threshold=threshold)

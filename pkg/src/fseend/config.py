"""Run configuration: one YAML file with model, data, training and output sections."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .datasim import MixtureSpec
from .model import ModelConfig
from .training import TrainConfig


@dataclass
class DataConfig:
    n_mixtures: int = 20
    n_heldout: int = 10
    speaker_counts: list[int] = field(default_factory=lambda: [2])
    duration_frames: int = 200
    overlap_ratio: float = 0.1
    mean_turn_frames: float = 20.0
    mean_gap_frames: float = 5.0
    gap_prob: float = 0.4
    cluster_spread: float = 0.1

    def mixture_spec(self, n_speakers: int, feature_dim: int, frame_period: float) -> MixtureSpec:
        return MixtureSpec(
            n_speakers=n_speakers,
            duration_frames=self.duration_frames,
            overlap_ratio=self.overlap_ratio,
            mean_turn_frames=self.mean_turn_frames,
            mean_gap_frames=self.mean_gap_frames,
            gap_prob=self.gap_prob,
            feature_dim=feature_dim,
            cluster_spread=self.cluster_spread,
            frame_period=frame_period,
        )


@dataclass
class RunConfig:
    seed: int = 0
    model: ModelConfig = field(default_factory=lambda: ModelConfig(input_dim=16, d_model=16, n_heads=2, n_enc_blocks=2, n_dec_blocks=1, s_max=2))
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    output_dir: str = "runs/default"
    checkpoint_every: int = 100

    def validate(self) -> None:
        if max(self.data.speaker_counts) > self.model.s_max:
            raise ValueError(f"speaker_counts {self.data.speaker_counts} exceed s_max={self.model.s_max}")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be positive")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "model": self.model.to_dict(),
            "train": asdict(self.train),
            "data": asdict(self.data),
            "output_dir": self.output_dir,
            "checkpoint_every": self.checkpoint_every,
        }


def _section(cls, raw: dict | None, where: str):
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ValueError(f"section {where!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown keys in {where!r}: {sorted(unknown)}")
    return cls(**raw)


def from_dict(raw: dict) -> RunConfig:
    raw = dict(raw or {})
    top = {"seed", "model", "train", "data", "output_dir", "checkpoint_every"}
    unknown = set(raw) - top
    if unknown:
        raise ValueError(f"unknown top-level config keys: {sorted(unknown)}")
    base = RunConfig()
    model_raw = {**base.model.to_dict(), **(raw.get("model") or {})}
    cfg = RunConfig(
        seed=int(raw.get("seed", 0)),
        model=_section(ModelConfig, model_raw, "model"),
        train=_section(TrainConfig, raw.get("train"), "train"),
        data=_section(DataConfig, raw.get("data"), "data"),
        output_dir=str(raw.get("output_dir", base.output_dir)),
        checkpoint_every=int(raw.get("checkpoint_every", base.checkpoint_every)),
    )
    cfg.validate()
    return cfg


def load(path) -> RunConfig:
    return from_dict(yaml.safe_load(Path(path).read_text()))


def dump(cfg: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))

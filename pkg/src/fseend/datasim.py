"""Synthetic multi-speaker feature sequences and feature file I/O.

Each speaker owns a random unit direction in feature space. A frame is the
sum of the directions of its active speakers plus Gaussian noise, so silence
is pure noise and overlap is a superposition. Speaker directions are drawn
per mixture: the model cannot memorize identities and must cluster online.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .labels import ActivityLabels

MAGIC = b"FSEEFEAT"
VERSION = 1
_HEADER = struct.Struct("<8sIIdQ")


@dataclass(frozen=True)
class MixtureSpec:
    n_speakers: int = 2
    duration_frames: int = 200
    overlap_ratio: float = 0.1
    mean_turn_frames: float = 20.0
    mean_gap_frames: float = 5.0
    gap_prob: float = 0.4
    seed: int = 0
    feature_dim: int = 16
    cluster_spread: float = 0.1
    frame_period: float = 0.1

    def validate(self, s_max: int = 4) -> None:
        if not 1 <= self.n_speakers <= s_max:
            raise ValueError(f"n_speakers must be in 1..{s_max}, got {self.n_speakers}")
        if self.duration_frames < 1 or self.feature_dim < 1:
            raise ValueError("duration_frames and feature_dim must be positive")
        if not 0.0 <= self.overlap_ratio < 1.0:
            raise ValueError(f"overlap_ratio must be in [0, 1), got {self.overlap_ratio}")
        if self.mean_turn_frames < 1 or self.mean_gap_frames < 0 or not 0 <= self.gap_prob <= 1:
            raise ValueError("invalid turn/gap parameters")
        if self.cluster_spread < 0:
            raise ValueError("cluster_spread must be non-negative")


def _turns(spec: MixtureSpec, rng: np.random.Generator) -> list[list]:
    """Sequential ``[speaker, start, end, follows_directly]`` turns covering the recording."""
    T = spec.duration_frames
    order = list(rng.permutation(spec.n_speakers))
    turns = []
    t = int(rng.integers(0, int(spec.mean_gap_frames) + 1))
    prev = None
    while t < T:
        if order:
            spk = order.pop(0)
        elif spec.n_speakers == 1:
            spk = 0
        else:
            spk = int(rng.choice([s for s in range(spec.n_speakers) if s != prev]))
        length = 1 + int(rng.geometric(1.0 / spec.mean_turn_frames))
        end = min(T, t + length)
        direct = bool(turns) and turns[-1][2] == t
        turns.append([spk, t, end, direct])
        prev = spk
        t = end
        if spec.gap_prob > 0 and rng.random() < spec.gap_prob and spec.mean_gap_frames > 0:
            t += 1 + int(rng.geometric(1.0 / (spec.mean_gap_frames + 1)))
    return turns


def generate_labels(spec: MixtureSpec, rng: np.random.Generator | None = None) -> ActivityLabels:
    spec.validate()
    rng = rng if rng is not None else np.random.default_rng([spec.seed, 0])
    turns = _turns(spec, rng)
    m = np.zeros((spec.duration_frames, spec.n_speakers), dtype=np.int8)
    for spk, a, b, _ in turns:
        m[a:b, spk] = 1
    speech = int(m.any(axis=1).sum())
    target = int(round(spec.overlap_ratio * speech)) if spec.n_speakers > 1 else 0
    # overlap by starting a turn early inside the turn that precedes it
    room = {i: turns[i - 1][2] - turns[i - 1][1] - 1 for i in range(1, len(turns)) if turns[i][3]}
    extend = dict.fromkeys(room, 0)
    while target > 0:
        open_ = [i for i in room if extend[i] < room[i]]
        if not open_:
            break
        i = open_[int(rng.integers(len(open_)))]
        extend[i] += 1
        target -= 1
    for i, k in extend.items():
        spk, a = turns[i][0], turns[i][1]
        m[a - k : a, spk] = 1
    return ActivityLabels(m, spec.frame_period)


def overlap_fraction(labels: ActivityLabels) -> float:
    n = labels.matrix.sum(axis=1)
    speech = (n > 0).sum()
    return float((n > 1).sum() / speech) if speech else 0.0


def generate(spec: MixtureSpec) -> tuple[np.ndarray, ActivityLabels]:
    """Features ``(T, F)`` and their activity labels, deterministic in ``spec.seed``.

    Feature values are rounded to float32 precision so they survive the
    binary file format unchanged.
    """
    spec.validate()
    rng = np.random.default_rng([spec.seed, 0])
    labels = generate_labels(spec, rng)
    centres = rng.normal(size=(spec.n_speakers, spec.feature_dim))
    centres /= np.linalg.norm(centres, axis=1, keepdims=True)
    noise = spec.cluster_spread * rng.normal(size=(spec.duration_frames, spec.feature_dim))
    x = labels.matrix.astype(np.float64) @ centres + noise
    return x.astype(np.float32).astype(np.float64), labels


def generate_corpus(n: int, spec: MixtureSpec, seed: int = 0) -> list[tuple[np.ndarray, ActivityLabels]]:
    """``n`` mixtures sharing ``spec`` apart from per-mixture seeds derived from ``seed``."""
    seeds = np.random.SeedSequence(seed).generate_state(n)
    return [generate(_replace_seed(spec, int(s))) for s in seeds]


def _replace_seed(spec: MixtureSpec, seed: int) -> MixtureSpec:
    from dataclasses import replace

    return replace(spec, seed=seed)


# ---------------------------------------------------------------- feature files


@dataclass
class FeatureSequence:
    data: np.ndarray  # (T, F) float64
    frame_period: float

    @property
    def dim(self) -> int:
        return self.data.shape[1]


def save_features(path, features: np.ndarray, frame_period: float = 0.1, format: str | None = None) -> None:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError(f"features must be T x F, got shape {features.shape}")
    fmt = format or _guess_format(path)
    T, F = features.shape
    if fmt == "binary":
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, VERSION, F, frame_period, T))
            fh.write(features.astype("<f4").tobytes())
    elif fmt == "csv":
        with open(path, "w") as fh:
            fh.write(f"#fseend-features v{VERSION} F={F} frame_period={frame_period!r}\n")
            for row in features:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
    else:
        raise ValueError(f"unknown feature format {fmt!r}")


def _guess_format(path) -> str:
    return "csv" if str(path).endswith(".csv") else "binary"


def load_features(path, format: str | None = None, expected_dim: int | None = None) -> FeatureSequence:
    fmt = format or _guess_format(path)
    if fmt == "binary":
        raw = Path(path).read_bytes()
        if len(raw) < _HEADER.size:
            raise ValueError(f"{path}: file too short for a feature header")
        magic, version, F, period, T = _HEADER.unpack_from(raw)
        if magic != MAGIC or version != VERSION:
            raise ValueError(f"{path}: bad feature header (magic {magic!r}, version {version})")
        payload = raw[_HEADER.size :]
        if len(payload) != 4 * T * F:
            raise ValueError(f"{path}: header declares {T}x{F} floats, payload has {len(payload) // 4}")
        data = np.frombuffer(payload, dtype="<f4").reshape(T, F).astype(np.float64)
    elif fmt == "csv":
        lines = Path(path).read_text().splitlines()
        if not lines or not lines[0].startswith("#fseend-features"):
            raise ValueError(f"{path}: missing '#fseend-features' header line")
        meta = dict(tok.split("=", 1) for tok in lines[0].split()[2:])
        try:
            F, period = int(meta["F"]), float(meta["frame_period"])
        except (KeyError, ValueError) as err:
            raise ValueError(f"{path}: malformed header {lines[0]!r}") from err
        rows = []
        for lineno, line in enumerate(lines[1:], start=2):
            vals = line.split(",")
            if len(vals) != F:
                raise ValueError(f"{path}:{lineno}: expected {F} values, got {len(vals)}")
            rows.append([float(v) for v in vals])
        data = np.array(rows, dtype=np.float64).reshape(len(rows), F)
    else:
        raise ValueError(f"unknown feature format {fmt!r}")
    bad = np.argwhere(~np.isfinite(data))
    if len(bad):
        t, f = bad[0]
        raise ValueError(f"{path}: non-finite value at frame {t}, dim {f}")
    if expected_dim is not None and data.shape[1] != expected_dim:
        raise ValueError(f"{path}: feature dim {data.shape[1]} does not match model input_dim {expected_dim}")
    return FeatureSequence(data, period)

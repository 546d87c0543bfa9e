"""Frame-in-frame-out runtime.

``push`` feeds one feature frame through the encoder step, queues the result
in the look-ahead ring, and once ``right_pad`` future frames are buffered runs
the convolution, the decoder step and the activity head for the oldest
pending frame. ``flush`` drains the tail with zero padding. The emitted
posteriors equal the offline forward pass up to float rounding.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import decoder, encoder, lookahead, objective
from .labels import ActivityLabels
from .numerics import Tensor


@dataclass
class DiarizationFrame:
    index: int
    posteriors: np.ndarray  # (n_slots,)
    decisions: np.ndarray  # (s_max,) bool, speaker slots only
    n_speakers: int  # speaker slots that have fired at least once so far

    @property
    def active(self) -> list[int]:
        return [int(i) + 1 for i in np.flatnonzero(self.decisions)]

    def to_json(self) -> str:
        return json.dumps(
            {
                "t": self.index,
                "posteriors": [float(p) for p in self.posteriors],
                "active": self.active,
                "n_speakers": self.n_speakers,
            }
        )


class StreamState:
    """All mutable inference state of one stream. Not thread-safe; one owner at a time."""

    def __init__(self, model, threshold: float = 0.5):
        cfg = model.config
        self.model = model
        self.params = model.tensors()
        self.threshold = threshold
        self.encoder_cache = encoder.EncoderCache(cfg.encoder)
        self.buffer = lookahead.LookaheadBuffer(cfg.lookahead)
        self.decoder_cache = decoder.DecoderCache(cfg.decoder)
        self.seen = np.zeros(cfg.s_max, dtype=bool)
        self.closed = False

    @property
    def frames_in(self) -> int:
        return self.buffer.frames_in

    @property
    def frames_out(self) -> int:
        return self.buffer.frames_out

    @property
    def right_pad(self) -> int:
        return self.model.config.right_pad

    def _emit(self, index: int, e: np.ndarray) -> DiarizationFrame:
        cfg = self.model.config
        a, _ = decoder.decode_step(e, self.decoder_cache, self.params, cfg.decoder)
        post = objective.activity(Tensor(a), Tensor(e)).data
        decisions = post[1 : cfg.s_max + 1] > self.threshold
        self.seen |= decisions
        return DiarizationFrame(index, post, decisions, int(self.seen.sum()))

    def push(self, x_t) -> DiarizationFrame | None:
        if self.closed:
            raise RuntimeError("push after the stream was closed")
        cfg = self.model.config
        h, _ = encoder.encode_step(x_t, self.encoder_cache, self.params, cfg.encoder)
        ready = lookahead.lookahead_step(h, self.buffer, self.params, cfg.lookahead)
        return None if ready is None else self._emit(*ready)

    def flush(self) -> list[DiarizationFrame]:
        if self.closed:
            raise RuntimeError("stream already flushed")
        cfg = self.model.config
        tail = lookahead.lookahead_flush(self.buffer, self.params, cfg.lookahead)
        self.closed = True
        return [self._emit(i, e) for i, e in tail]

    def cache_sizes(self) -> dict[str, int]:
        return {
            "encoder_frames": self.encoder_cache.length,
            "decoder_frames": self.decoder_cache.length,
            "decoder_entries_per_block": self.decoder_cache.entries(),
            "lookahead_pending": self.buffer.pending,
            "bytes": self.encoder_cache.nbytes() + self.decoder_cache.nbytes(),
        }


def push(state: StreamState, x_t) -> DiarizationFrame | None:
    return state.push(x_t)


def flush(state: StreamState) -> list[DiarizationFrame]:
    return state.flush()


def run_stream(model, features, threshold: float = 0.5) -> list[DiarizationFrame]:
    """Push every frame of ``features`` and flush; one frame out per frame in."""
    state = model.open_stream(threshold=threshold)
    out = [f for f in (state.push(x) for x in np.asarray(features)) if f is not None]
    return out + state.flush()


def stack_posteriors(frames: list[DiarizationFrame], n_slots: int) -> np.ndarray:
    if not frames:
        return np.zeros((0, n_slots))
    return np.stack([f.posteriors for f in frames])


def frames_to_labels(frames: list[DiarizationFrame], s_max: int, frame_period: float) -> ActivityLabels:
    m = np.zeros((len(frames), s_max), dtype=np.int8)
    for f in frames:
        m[f.index] = f.decisions
    return ActivityLabels(m, frame_period)


# ---------------------------------------------------------------- benchmarking


@dataclass
class RTFReport:
    rtf: float
    processing_seconds: float
    audio_seconds: float
    n_frames: int
    p50_ms: float
    p90_ms: float
    p99_ms: float
    cost_curve: list[tuple[int, float]]  # (first frame of bin, mean push time in ms)
    cache_bytes: list[tuple[int, int]] = field(default_factory=list)
    frame_times_ms: list[float] = field(default_factory=list, repr=False)

    @property
    def real_time(self) -> bool:
        return self.rtf < 1.0

    def to_dict(self) -> dict:
        return {
            "rtf": self.rtf,
            "real_time": self.real_time,
            "processing_seconds": self.processing_seconds,
            "audio_seconds": self.audio_seconds,
            "n_frames": self.n_frames,
            "p50_ms": self.p50_ms,
            "p90_ms": self.p90_ms,
            "p99_ms": self.p99_ms,
            "cost_curve": self.cost_curve,
            "cache_bytes": self.cache_bytes,
        }

    def table(self) -> str:
        lines = [
            f"frames           {self.n_frames}",
            f"audio            {self.audio_seconds:.2f} s",
            f"processing       {self.processing_seconds:.3f} s",
            f"RTF              {self.rtf:.4f}" + ("" if self.real_time else "  (not real-time)"),
            f"per-frame p50    {self.p50_ms:.3f} ms",
            f"per-frame p90    {self.p90_ms:.3f} ms",
            f"per-frame p99    {self.p99_ms:.3f} ms",
            "cost vs t:",
        ]
        lines += [f"  t>={t:<6d} {ms:.3f} ms" for t, ms in self.cost_curve]
        return "\n".join(lines)


def measure_rtf(model, features, frame_period: float | None = None, n_bins: int = 10) -> RTFReport:
    """Stream ``features`` through ``model`` once and time every push.

    ``model`` only needs ``open_stream()`` returning an object with ``push`` and
    ``flush``; a ``config.frame_period`` is used when ``frame_period`` is None.
    """
    features = np.asarray(features)
    T = len(features)
    if frame_period is None:
        frame_period = model.config.frame_period
    state = model.open_stream()
    times = np.zeros(T)
    cache_bytes = []
    sample_every = max(1, T // n_bins) if T else 1
    start = time.perf_counter()
    for t in range(T):
        t0 = time.perf_counter()
        state.push(features[t])
        times[t] = time.perf_counter() - t0
        if hasattr(state, "cache_sizes") and t % sample_every == 0:
            cache_bytes.append((t, state.cache_sizes()["bytes"]))
    state.flush()
    total = time.perf_counter() - start
    audio = T * frame_period
    ms = times * 1e3
    curve = []
    if T:
        for chunk in np.array_split(np.arange(T), min(n_bins, T)):
            curve.append((int(chunk[0]), float(ms[chunk].mean())))
    pct = np.percentile(ms, [50, 90, 99]) if T else np.zeros(3)
    return RTFReport(
        rtf=total / audio if audio > 0 else 0.0,
        processing_seconds=total,
        audio_seconds=audio,
        n_frames=T,
        p50_ms=float(pct[0]),
        p90_ms=float(pct[1]),
        p99_ms=float(pct[2]),
        cost_curve=curve,
        cache_bytes=cache_bytes,
        frame_times_ms=ms.tolist(),
    )

"""Diarization scoring: frame-level DER with collar, corpus tables, embedding dumps."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import labels as lab
from .labels import ActivityLabels


@dataclass
class DerReport:
    miss: float
    false_alarm: float
    confusion: float
    scored_speech: float
    der: float
    mapping: dict = field(default_factory=dict)

    @property
    def undefined(self) -> bool:
        """True when nothing was scored but the hypothesis still made errors."""
        return math.isinf(self.der)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mapping"] = {str(k): v for k, v in self.mapping.items()}
        return d


def scored_frames(ref: np.ndarray, frame_period: float, collar: float) -> np.ndarray:
    """Boolean mask of frames farther than ``collar`` from every reference segment edge.

    Frame ``i`` spans ``[i, i+1)`` in frame units; it is dropped when its
    centre lies strictly within ``collar`` of an onset or offset.
    """
    if collar < 0:
        raise ValueError("collar must be non-negative")
    T = ref.shape[0]
    keep = np.ones(T, dtype=bool)
    c = round(collar / frame_period, 6)
    if c == 0 or T == 0:
        return keep
    padded = np.pad(np.asarray(ref, dtype=np.int8), ((1, 1), (0, 0)))
    edges = np.flatnonzero(np.diff(padded, axis=0).any(axis=1))
    centres = np.arange(T) + 0.5
    for b in edges:
        keep &= np.abs(centres - b) >= c
    return keep


def _error_counts(ref: np.ndarray, hyp: np.ndarray, mapping: dict[int, int], keep: np.ndarray):
    r = ref[keep].astype(np.int64)
    h = hyp[keep].astype(np.int64)
    n_ref = r.sum(axis=1)
    n_hyp = h.sum(axis=1)
    correct = np.zeros_like(n_ref)
    for i, j in mapping.items():
        correct += h[:, i] & r[:, j]
    miss = np.maximum(n_ref - n_hyp, 0).sum()
    fa = np.maximum(n_hyp - n_ref, 0).sum()
    conf = (np.minimum(n_ref, n_hyp) - correct).sum()
    return int(miss), int(fa), int(conf), int(n_ref.sum())


def _align(ref: ActivityLabels, hyp: ActivityLabels) -> tuple[np.ndarray, np.ndarray]:
    if not np.isclose(ref.frame_period, hyp.frame_period):
        raise ValueError(f"frame periods differ: {ref.frame_period} vs {hyp.frame_period}")
    T = max(ref.n_frames, hyp.n_frames)
    r = np.zeros((T, ref.n_speakers), dtype=np.int8)
    h = np.zeros((T, hyp.n_speakers), dtype=np.int8)
    r[: ref.n_frames] = ref.matrix
    h[: hyp.n_frames] = hyp.matrix
    return r, h


def der(ref: ActivityLabels, hyp: ActivityLabels, collar: float = 0.25, mapping: str = "optimal") -> DerReport:
    """Frame-level DER of ``hyp`` against ``ref``.

    ``mapping="optimal"`` assigns hypothesis columns to reference speakers to
    minimize the error on the scored frames. ``mapping="appearance"`` pairs
    hypothesis column i with the i-th reference speaker to start talking, so
    a hypothesis that enrolls speakers late or out of order is penalized.
    """
    r, h = _align(ref, hyp)
    keep = scored_frames(r, ref.frame_period, collar)
    if mapping == "optimal":
        cols = lab.optimal_speaker_mapping(r[keep], h[keep])
    elif mapping == "appearance":
        order = lab.appearance_order(r)
        cols = {i: j for i, j in enumerate(order) if i < h.shape[1]}
    else:
        raise ValueError(f"unknown mapping mode {mapping!r}")
    miss, fa, conf, speech = _error_counts(r, h, cols, keep)
    p = ref.frame_period
    errors = miss + fa + conf
    if speech == 0:
        rate = 0.0 if errors == 0 else math.inf
    else:
        rate = errors / speech
    return DerReport(miss * p, fa * p, conf * p, speech * p, rate, cols)


def pool(reports: list[DerReport]) -> DerReport:
    """Sum errors and scored speech over recordings (not a mean of rates)."""
    miss = sum(r.miss for r in reports)
    fa = sum(r.false_alarm for r in reports)
    conf = sum(r.confusion for r in reports)
    speech = sum(r.scored_speech for r in reports)
    errors = miss + fa + conf
    rate = errors / speech if speech > 0 else (0.0 if errors == 0 else math.inf)
    return DerReport(miss, fa, conf, speech, rate)


def posteriors_to_labels(post: np.ndarray, s_max: int, frame_period: float, threshold: float = 0.5) -> ActivityLabels:
    """Binarize the speaker slots ``1..s_max`` of a ``(T, s_max + 2)`` posterior matrix."""
    return ActivityLabels((np.asarray(post)[:, 1 : s_max + 1] > threshold).astype(np.int8), frame_period)


@dataclass
class CorpusReport:
    optimal: dict[int, DerReport]
    appearance: dict[int, DerReport]
    recordings: list[dict] = field(default_factory=list)

    def table(self, name: str = "model") -> str:
        counts = sorted(self.optimal)
        head = f"{'Methods':<28}" + "".join(f"{c:>8d}" for c in counts)
        row1 = f"{name:<28}" + "".join(f"{100 * self.optimal[c].der:8.1f}" for c in counts)
        row2 = f"{'  with appearance order':<28}" + "".join(f"{100 * self.appearance[c].der:8.1f}" for c in counts)
        return "\n".join(["DER (%) by number of speakers", head, row1, row2])

    def to_json(self) -> str:
        return json.dumps(
            {
                "optimal": {str(k): v.to_dict() for k, v in self.optimal.items()},
                "appearance": {str(k): v.to_dict() for k, v in self.appearance.items()},
                "recordings": self.recordings,
            },
            indent=2,
        )


def evaluate_corpus(
    model,
    dataset,
    collar: float = 0.25,
    threshold: float = 0.5,
    mode: str = "offline",
) -> CorpusReport:
    """Score every recording and pool the errors per true speaker count.

    ``dataset`` is an iterable of ``(features, ActivityLabels)`` pairs.
    ``mode="stream"`` runs the frame-by-frame runtime instead of the batch pass.
    """
    from .streaming import run_stream, stack_posteriors

    cfg = model.config
    groups: dict[int, list[tuple[DerReport, DerReport]]] = {}
    per_rec = []
    for idx, (features, ref) in enumerate(dataset):
        if mode == "offline":
            post = model.infer(features)
        elif mode == "stream":
            post = stack_posteriors(run_stream(model, features, threshold), cfg.n_slots)
        else:
            raise ValueError(f"unknown inference mode {mode!r}")
        hyp = posteriors_to_labels(post, cfg.s_max, ref.frame_period, threshold)
        opt = der(ref, hyp, collar, "optimal")
        app = der(ref, hyp, collar, "appearance")
        n_spk = int(ref.matrix.any(axis=0).sum())
        groups.setdefault(n_spk, []).append((opt, app))
        per_rec.append({"index": idx, "n_speakers": n_spk, "der_optimal": opt.der, "der_appearance": app.der})
    return CorpusReport(
        optimal={k: pool([o for o, _ in v]) for k, v in sorted(groups.items())},
        appearance={k: pool([a for _, a in v]) for k, v in sorted(groups.items())},
        recordings=per_rec,
    )


def label_codes(labels: ActivityLabels | np.ndarray) -> np.ndarray:
    """Per-frame bitmask over appearance-ordered speakers (0 = silence, 1 = first speaker, ...)."""
    m = labels.matrix if isinstance(labels, ActivityLabels) else np.asarray(labels)
    order = lab.appearance_order(m)
    codes = np.zeros(m.shape[0], dtype=np.int64)
    for slot, col in enumerate(order):
        codes |= m[:, col].astype(np.int64) << slot
    return codes


def dump_embeddings(model, features, labels: ActivityLabels | None = None) -> list[list]:
    """Rows ``[t, e_1 .. e_D, label_code]`` of post-look-ahead embeddings."""
    e = model.embed(features)
    codes = label_codes(labels) if labels is not None else np.full(len(e), -1)
    return [[t, *map(float, e[t]), int(codes[t])] for t in range(len(e))]


def write_embeddings_csv(path, rows: list[list], d_model: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"e{i}" for i in range(d_model)] + ["label"])
        w.writerows(rows)

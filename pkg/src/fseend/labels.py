"""Speaker activity labels: appearance ordering, permutation search, file formats.

Extended label rows are laid out as ``[spk0, spk1 .. spk_smax, ter]``: slot 0
is the non-speech speaker, the speaker slots follow in order of first
activity, and the last slot is the always-zero termination marker.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

FRAME_PERIOD = 0.1


@dataclass
class ActivityLabels:
    """Binary ``T x S`` activity matrix plus its frame period in seconds."""

    matrix: np.ndarray
    frame_period: float = FRAME_PERIOD

    def __post_init__(self):
        m = np.asarray(self.matrix)
        if m.ndim != 2:
            raise ValueError(f"activity matrix must be 2-D, got shape {m.shape}")
        if not np.isin(m, (0, 1)).all():
            raise ValueError("activity labels must be binary")
        self.matrix = m.astype(np.int8)

    @property
    def n_frames(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_speakers(self) -> int:
        return self.matrix.shape[1]


@dataclass
class ExtendedLabelSequence:
    matrix: np.ndarray  # T x (s_max + 2)
    speaker_count: int
    order: list[int]  # order[i] = original column of speaker slot i + 1

    @property
    def s_max(self) -> int:
        return self.matrix.shape[1] - 2

    @property
    def speakers(self) -> np.ndarray:
        return self.matrix[:, 1:-1]


def first_active_frames(matrix: np.ndarray) -> np.ndarray:
    """First active frame per column; ``T`` for columns that never speak."""
    m = np.asarray(matrix, dtype=bool)
    return np.where(m.any(axis=0), m.argmax(axis=0), m.shape[0])


def appearance_order(matrix: np.ndarray) -> list[int]:
    """Columns with any activity, sorted by first active frame (ties by index)."""
    first = first_active_frames(matrix)
    active = [s for s in range(len(first)) if first[s] < len(matrix)]
    return sorted(active, key=lambda s: (first[s], s))


def to_appearance_order(labels: ActivityLabels | np.ndarray, s_max: int) -> ExtendedLabelSequence:
    m = labels.matrix if isinstance(labels, ActivityLabels) else np.asarray(labels)
    order = appearance_order(m)
    if len(order) > s_max:
        raise ValueError(f"{len(order)} active speakers exceed s_max={s_max}")
    T = m.shape[0]
    ext = np.zeros((T, s_max + 2), dtype=np.int8)
    for slot, col in enumerate(order, start=1):
        ext[:, slot] = m[:, col]
    ext[:, 0] = ~ext[:, 1 : s_max + 1].any(axis=1)
    return ExtendedLabelSequence(ext, len(order), order)


def from_appearance_order(ext: ExtendedLabelSequence, n_speakers: int) -> np.ndarray:
    """Undo :func:`to_appearance_order`, returning a ``T x n_speakers`` matrix."""
    out = np.zeros((ext.matrix.shape[0], n_speakers), dtype=np.int8)
    for slot, col in enumerate(ext.order, start=1):
        out[:, col] = ext.matrix[:, slot]
    return out


def mean_bce(preds: np.ndarray, targets: np.ndarray, eps: float = 1e-7) -> float:
    """Frame-averaged BCE summed over columns."""
    p = np.clip(preds, eps, 1.0 - eps)
    y = np.asarray(targets, dtype=np.float64)
    return float(-(y * np.log(p) + (1.0 - y) * np.log1p(-p)).sum(axis=1).mean())


def pit_best_permutation(preds: np.ndarray, targets: np.ndarray) -> tuple[tuple[int, ...], float]:
    """Exhaustive search for the column permutation of ``preds`` with least BCE.

    Returns ``(perm, loss)`` where ``preds[:, perm]`` is the best alignment to
    ``targets``. Ties resolve to the lexicographically first permutation.
    """
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets)
    if preds.shape != targets.shape or preds.ndim != 2:
        raise ValueError(f"shape mismatch: preds {preds.shape} vs targets {targets.shape}")
    best, best_loss = None, np.inf
    for perm in itertools.permutations(range(preds.shape[1])):
        loss = mean_bce(preds[:, perm], targets)
        if loss < best_loss:
            best, best_loss = perm, loss
    return best, best_loss


def optimal_speaker_mapping(ref, hyp) -> dict[int, int]:
    """Injective hyp-column -> ref-column mapping maximizing co-active frames.

    Solved as a rectangular assignment problem. Accepts ActivityLabels or
    plain matrices; with a mask applied beforehand the mapping is computed
    on the scored frames only.
    """
    r = np.asarray(ref.matrix if isinstance(ref, ActivityLabels) else ref, dtype=np.int64)
    h = np.asarray(hyp.matrix if isinstance(hyp, ActivityLabels) else hyp, dtype=np.int64)
    if isinstance(ref, ActivityLabels) and isinstance(hyp, ActivityLabels):
        if not np.isclose(ref.frame_period, hyp.frame_period):
            raise ValueError("reference and hypothesis frame periods differ")
    if r.shape[1] == 0 or h.shape[1] == 0:
        return {}
    agreement = h.T @ r  # hyp x ref co-activity counts
    rows, cols = linear_sum_assignment(agreement, maximize=True)
    return {int(i): int(j) for i, j in zip(rows, cols)}


def mapping_agreement(ref: np.ndarray, hyp: np.ndarray, mapping: dict[int, int]) -> int:
    return int(sum((np.asarray(hyp)[:, i] & np.asarray(ref)[:, j]).sum() for i, j in mapping.items()))


# ---------------------------------------------------------------- file formats


def segments(matrix: np.ndarray, frame_period: float) -> list[tuple[int, float, float]]:
    """Contiguous active runs as ``(column, onset_sec, duration_sec)``."""
    out = []
    m = np.asarray(matrix, dtype=np.int8)
    for col in range(m.shape[1]):
        edges = np.diff(np.concatenate(([0], m[:, col], [0])))
        starts = np.flatnonzero(edges == 1)
        ends = np.flatnonzero(edges == -1)
        for s, e in zip(starts, ends):
            out.append((col, s * frame_period, (e - s) * frame_period))
    out.sort(key=lambda seg: (seg[1], seg[0]))
    return out


def write_rttm(path, labels: ActivityLabels, rec_id: str = "rec", speaker_names=None) -> None:
    names = speaker_names or [f"spk{i + 1}" for i in range(labels.n_speakers)]
    with open(path, "w") as fh:
        for col, onset, dur in segments(labels.matrix, labels.frame_period):
            fh.write(f"SPEAKER {rec_id} {onset:.3f} {dur:.3f} {names[col]}\n")


def read_rttm(
    path,
    frame_period: float = FRAME_PERIOD,
    n_frames: int | None = None,
    speakers: list[str] | None = None,
) -> tuple[ActivityLabels, list[str]]:
    """Read the 5-field ``SPEAKER rec onset dur spk`` format or standard 10-field RTTM.

    Speakers are sorted by name unless ``speakers`` fixes the column order.
    Multiple recordings in one file are not separated; pass one per file.
    """
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        parts = line.split()
        if not parts or parts[0] != "SPEAKER":
            continue
        try:
            if len(parts) >= 8:
                onset, dur, spk = float(parts[3]), float(parts[4]), parts[7]
            else:
                onset, dur, spk = float(parts[2]), float(parts[3]), parts[4]
        except (IndexError, ValueError) as err:
            raise ValueError(f"{path}:{lineno}: malformed RTTM line {line!r}") from err
        rows.append((onset, dur, spk))
    names = list(speakers) if speakers is not None else sorted({r[2] for r in rows})
    index = {n: i for i, n in enumerate(names)}
    end = max((round((o + d) / frame_period) for o, d, _ in rows), default=0)
    T = n_frames if n_frames is not None else end
    m = np.zeros((T, len(names)), dtype=np.int8)
    for onset, dur, spk in rows:
        if spk not in index:
            raise ValueError(f"{path}: unknown speaker {spk!r}")
        a = round(onset / frame_period)
        b = round((onset + dur) / frame_period)
        m[a:b, index[spk]] = 1
    return ActivityLabels(m, frame_period), names


def write_label_csv(path, labels: ActivityLabels) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame_index"] + [f"spk_{i + 1}" for i in range(labels.n_speakers)])
        for t, row in enumerate(labels.matrix):
            w.writerow([t] + [int(v) for v in row])


def read_label_csv(path, frame_period: float = FRAME_PERIOD) -> ActivityLabels:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "frame_index":
            raise ValueError(f"{path}: expected a 'frame_index,spk_1,...' header")
        rows = [[int(v) for v in r[1:]] for r in reader if r]
    m = np.array(rows, dtype=np.int8).reshape(len(rows), len(header) - 1)
    return ActivityLabels(m, frame_period)

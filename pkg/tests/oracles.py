"""Slow, obviously-correct reference implementations used as test oracles."""
import itertools
import math
from fractions import Fraction

import numpy as np


def naive_der(ref, hyp, period, collar):
    """Brute force: exact collar arithmetic, every injective column mapping tried."""
    T = max(len(ref), len(hyp))
    r = np.zeros((T, ref.shape[1]), dtype=int)
    h = np.zeros((T, hyp.shape[1]), dtype=int)
    r[: len(ref)], h[: len(hyp)] = ref, hyp
    c = Fraction(str(collar)) / Fraction(str(period))
    edges = [0] if r[0].any() else []
    edges += [t for t in range(1, T) if (r[t] != r[t - 1]).any()]
    if r[T - 1].any():
        edges.append(T)
    scored = [t for t in range(T) if all(abs(Fraction(2 * t + 1, 2) - b) >= c for b in edges)]
    best = None
    R, H = r.shape[1], h.shape[1]
    slots = list(range(R)) + [None] * H
    for assign in set(itertools.permutations(slots, H)):
        err = 0
        for t in scored:
            nr, nh = r[t].sum(), h[t].sum()
            correct = sum(h[t, i] and r[t, j] for i, j in enumerate(assign) if j is not None)
            err += max(nr - nh, 0) + max(nh - nr, 0) + min(nr, nh) - correct
        best = err if best is None else min(best, err)
    speech = sum(r[t].sum() for t in scored)
    if speech == 0:
        return 0.0 if best == 0 else math.inf
    return best / speech


def naive_bce(p, y, eps=1e-7):
    """Clamped BCE summed over columns, averaged over rows, one element at a time."""
    T, S = p.shape
    total = 0.0
    for t in range(T):
        for s in range(S):
            q = min(max(p[t, s], eps), 1 - eps)
            total -= y[t, s] * np.log(q) + (1 - y[t, s]) * np.log(1 - q)
    return total / T


def naive_similarity_loss(e, y):
    T = len(e)
    total = 0.0
    for i in range(T):
        for j in range(T):
            ni, nj = np.linalg.norm(y[i]), np.linalg.norm(y[j])
            c = 0.0 if ni == 0 or nj == 0 else float(y[i] @ y[j]) / (ni * nj)
            total += (float(e[i] @ e[j]) - c) ** 2
    return total / T**2


def brute_pit(p, y):
    """Smallest BCE over every column permutation of ``p``."""
    return min(naive_bce(p[:, list(q)], y) for q in itertools.permutations(range(p.shape[1])))


def brute_mapping_agreement(ref, hyp):
    """Largest co-active frame count over every injective hyp -> ref column assignment."""
    R, H = ref.shape[1], hyp.shape[1]
    best = 0
    for assign in set(itertools.permutations(list(range(R)) + [None] * H, H)):
        best = max(best, sum(int((hyp[:, i] & ref[:, j]).sum()) for i, j in enumerate(assign) if j is not None))
    return best

"""DTW distance and a K-nearest-neighbour classifier built on it.

Local cost is |x_i - y_j| with match/insert/delete steps. Multivariate
windows are compared by summing per-feature DTW distances. Neighbour search
is exact. Candidates are visited in LB_Keogh order, and a DTW computation is
abandoned once its partial cost strictly exceeds the current K-th best.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from .core import BehaviorLabel, ClassificationResult, DataError

DEFAULT_BAND = 500
UNBANDED = -1
_NO_TAIL = np.empty(0)


@njit(cache=True)
def _dtw_kernel(x, y, band, cutoff, tail):
    # tail[j]: lower bound on the cost still owed by y[j:], or empty
    n = x.shape[0]
    m = y.shape[0]
    if band < 0:
        band = max(n, m)
    band = max(band, abs(n - m))
    inf = np.inf
    prev = np.full(m + 1, inf)
    cur = np.full(m + 1, inf)
    prev[0] = 0.0
    for i in range(1, n + 1):
        jlo = max(1, i - band)
        jhi = min(m, i + band)
        cur[jlo - 1] = inf
        xi = x[i - 1]
        left = inf
        rowmin = inf
        for j in range(jlo, jhi + 1):
            v = abs(xi - y[j - 1]) + min(min(prev[j - 1], prev[j]), left)
            cur[j] = v
            left = v
            rowmin = min(rowmin, v)
        owed = 0.0
        if tail.shape[0] > 0:
            owed = tail[min(i + band, m)]
        if rowmin + owed > cutoff:
            return inf
        tmp = prev
        prev = cur
        cur = tmp
    return prev[m]


def dtw(x, y, band: int | None = None, cutoff: float = np.inf) -> float:
    """Dynamic time warping distance between two 1-D series.

    ``band`` is the Sakoe-Chiba radius (None for unconstrained); it is widened
    to |len(x) - len(y)| so a path always exists. When ``cutoff`` is finite
    the computation returns inf as soon as every partial path exceeds it.
    """
    x = np.ascontiguousarray(x, dtype=np.float64).ravel()
    y = np.ascontiguousarray(y, dtype=np.float64).ravel()
    if x.size == 0 or y.size == 0:
        raise DataError("dtw needs non-empty series")
    return float(_dtw_kernel(x, y, UNBANDED if band is None else int(band), float(cutoff), _NO_TAIL))


def envelope(q: np.ndarray, radius: int) -> tuple[np.ndarray, np.ndarray]:
    """Running max/min of ``q`` over [i - radius, i + radius]."""
    q = np.asarray(q, dtype=np.float64)
    if radius <= 0:
        return q.copy(), q.copy()
    padded = np.pad(q, radius, mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(padded, 2 * radius + 1)
    return win.max(axis=1), win.min(axis=1)


def lb_points(candidates: np.ndarray, upper: np.ndarray, lower: np.ndarray) -> np.ndarray:
    """Per-point distance of ``candidates`` to the [lower, upper] envelope."""
    return np.clip(candidates - upper, 0.0, None) + np.clip(lower - candidates, 0.0, None)


def lb_keogh(candidates: np.ndarray, upper: np.ndarray, lower: np.ndarray) -> np.ndarray:
    """LB_Keogh lower bound on L1 DTW for each row of ``candidates``."""
    return lb_points(candidates, upper, lower).sum(axis=-1)


def _tail_sums(points: np.ndarray) -> np.ndarray:
    out = np.zeros(points.shape[0] + 1)
    out[:-1] = np.cumsum(points[::-1])[::-1]
    return out


@dataclass
class KnnModel:
    """Normalized training windows (M, T, n) plus integer labels."""

    windows: np.ndarray
    labels: np.ndarray
    label_set: tuple[BehaviorLabel, ...]
    k: int = 1
    band: int | None = DEFAULT_BAND
    aggregation: str = "sum"
    features: tuple = field(default=())

    def __post_init__(self):
        self.windows = np.ascontiguousarray(self.windows, dtype=np.float64)
        if self.windows.ndim == 2:
            self.windows = self.windows[:, :, None]
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.windows.shape[0] == 0:
            raise DataError("KNN model needs training windows")
        if self.windows.shape[0] != self.labels.shape[0]:
            raise DataError("windows and labels differ in count")
        if not 1 <= self.k <= self.windows.shape[0]:
            raise DataError(f"K must be in [1, {self.windows.shape[0]}], got {self.k}")
        if self.aggregation != "sum":
            raise DataError("only 'sum' aggregation of per-feature DTW is supported")
        # column-major copy so each feature series is contiguous
        self._by_feature = np.ascontiguousarray(np.transpose(self.windows, (2, 0, 1)))

    @property
    def n_features(self) -> int:
        return self.windows.shape[2]


def nearest(model: KnnModel, query: np.ndarray, k: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Indices and distances of the ``k`` nearest training windows, ascending.

    Distance ties are ordered by training index, so the result does not depend
    on the order in which candidates were examined.
    """
    k = model.k if k is None else k
    q = np.asarray(query, dtype=np.float64)
    if q.ndim == 1:
        q = q[:, None]
    if q.shape[1] != model.n_features:
        raise DataError(f"query has {q.shape[1]} features, model has {model.n_features}")
    M, T = model.windows.shape[0], model.windows.shape[1]
    if k > M:
        raise DataError("K exceeds training size")
    n = model.n_features
    equal_len = q.shape[0] == T
    if equal_len:
        radius = T if model.band is None else model.band
        lbs = np.empty((n, M))
        envs = []
        for f in range(n):
            up, lo = envelope(q[:, f], radius)
            envs.append((up, lo))
            lbs[f] = lb_keogh(model._by_feature[f], up, lo)
    else:
        lbs = np.zeros((n, M))
        envs = None
    lb_total = lbs.sum(axis=0)
    order = np.argsort(lb_total, kind="stable")
    band = UNBANDED if model.band is None else int(model.band)
    qcols = [np.ascontiguousarray(q[:, f]) for f in range(n)]

    best: list[tuple[float, int]] = []  # sorted (distance, index), at most k

    def threshold() -> float:
        return best[-1][0] if len(best) == k else np.inf

    for idx in order:
        thr = threshold()
        if lb_total[idx] > thr:
            break
        total = 0.0
        remaining = lb_total[idx]
        for f in range(n):
            remaining -= lbs[f, idx]
            cand = model._by_feature[f, idx]
            tail = _NO_TAIL
            if envs is not None and np.isfinite(thr):
                tail = _tail_sums(lb_points(cand, *envs[f]))
            d = _dtw_kernel(qcols[f], cand, band, thr - total - remaining, tail)
            total += d
            if total + remaining > thr:
                break
        if total + remaining > thr or not np.isfinite(total):
            continue
        entry = (total, int(idx))
        best.append(entry)
        best.sort()
        if len(best) > k:
            best.pop()
    ids = np.array([b[1] for b in best], dtype=np.int64)
    dist = np.array([b[0] for b in best])
    return ids, dist


def vote(labels: np.ndarray, distances: np.ndarray, n_classes: int) -> tuple[int, np.ndarray]:
    """Majority vote; ties go to the smaller mean distance, then the lower label id."""
    counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
    top = counts.max()
    tied = np.flatnonzero(counts == top)
    if tied.size > 1:
        means = np.array([distances[labels == c].mean() for c in tied])
        tied = tied[means == means.min()]
    return int(tied.min()), counts / counts.sum()


def knn_classify(model: KnnModel, window) -> ClassificationResult:
    values = getattr(window, "values", window)
    t0 = time.perf_counter()
    ids, dist = nearest(model, values)
    winner, probs = vote(model.labels[ids], dist, len(model.label_set))
    latency = (time.perf_counter() - t0) * 1e6
    return ClassificationResult(model.label_set[winner], probs, max(latency, 1e-3))


def sweep_k(model: KnnModel, queries: np.ndarray, truth: Sequence[int], ks=(1, 3, 5, 7)) -> dict[int, float]:
    """Accuracy for each K from a single exact neighbour search at max(ks)."""
    kmax = max(ks)
    correct = {k: 0 for k in ks}
    c = len(model.label_set)
    for q, y in zip(queries, truth):
        ids, dist = nearest(model, q, kmax)
        labs = model.labels[ids]
        for k in ks:
            winner, _ = vote(labs[:k], dist[:k], c)
            correct[k] += int(winner == y)
    return {k: correct[k] / len(truth) for k in ks}

"""Leakage ranking of return values by average pairwise Euclidean distance.

Repeating one behavior N times gives N series per feature. A feature whose
series stay close together across repeats (small average distance) tracks
the behavior reliably and ranks as more vulnerable.
"""
from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .core import DataError, FeatureId, RankingReport
from .signalprep import normalize_array


def euclid(x, y) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise DataError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 1:
        raise DataError("series must be non-empty")
    d = x - y
    return float(np.sqrt(np.dot(d, d)))


def avg_distance(series_set) -> float:
    """2 / (N (N-1)) times the sum of distances over unordered pairs."""
    v = np.asarray(series_set, dtype=np.float64)
    if v.ndim != 2:
        raise DataError("expected an (N, T) array of series")
    N = v.shape[0]
    if N < 2:
        raise DataError("need at least two series")
    total = 0.0
    for i in range(N - 1):
        diff = v[i + 1:] - v[i]
        total += float(np.sqrt(np.einsum("ij,ij->i", diff, diff)).sum())
    return 2.0 * total / (N * (N - 1))


def rank_features(
    traces: Mapping[FeatureId, Sequence],
    normalize: bool = True,
) -> RankingReport:
    """Rank features ascending by average distance across repeated-behavior series.

    ``traces`` maps each feature to its N repeated series (an (N, T) array or a
    list of 1-D series). Series are min-max normalized individually unless
    ``normalize`` is False.
    """
    if not traces:
        raise DataError("no feature data to rank")
    counts = set()
    scored = []
    for feat, series in traces.items():
        if series is None or len(series) == 0:
            raise DataError(f"missing data for feature {feat}")
        v = np.asarray(series, dtype=np.float64)
        if v.ndim != 2:
            raise DataError(f"feature {feat}: expected (N, T) series array")
        counts.add(v.shape[0])
        if normalize:
            v = normalize_array(v[:, :, None], "minmax")[:, :, 0]
        scored.append((feat, avg_distance(v)))
    if len(counts) != 1:
        raise DataError(f"features have different repetition counts: {sorted(counts)}")
    scored.sort(key=lambda e: (e[1], str(e[0])))
    return RankingReport(tuple(scored))

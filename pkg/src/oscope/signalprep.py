"""Window normalization, extraction and feature fusion.

Statistics are computed per window and per column. A zero denominator
(constant column) yields an all-zero column so downstream layers stay finite.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import WINDOW_LENGTH, DataError, FeatureId, RawTrace, Window

METHODS = ("minmax", "mean", "zscore", "meansub", "none")


@dataclass(frozen=True, eq=False)
class NormalizedWindow:
    features: tuple[FeatureId, ...]
    values: np.ndarray
    method: str
    min: np.ndarray
    max: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    label: object = None

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]


def _columns(x) -> tuple[np.ndarray, tuple, object]:
    if isinstance(x, (Window, NormalizedWindow)):
        return np.asarray(x.values, dtype=np.float64), x.features, x.label
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr, tuple(), None


def normalize_array(x: np.ndarray, method: str) -> np.ndarray:
    """Column-wise normalization of a (T, n) array, or a (B, T, n) batch."""
    x = np.asarray(x, dtype=np.float64)
    if method == "none":
        return x.copy()
    lo = x.min(axis=-2, keepdims=True)
    hi = x.max(axis=-2, keepdims=True)
    if method == "minmax":
        num, den = x - lo, hi - lo
    else:
        mu = x.mean(axis=-2, keepdims=True)
        num = x - mu
        if method == "mean":
            den = hi - lo
        elif method == "zscore":
            den = x.std(axis=-2, keepdims=True)
        elif method == "meansub":
            return num
        else:
            raise ValueError(f"unknown normalization {method!r}; choose from {METHODS}")
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=np.broadcast_to(den != 0, num.shape))
    if method == "minmax":
        # rounding can land a hair outside [0, 1]
        np.clip(out, 0.0, 1.0, out=out)
    return out


def _normalize(window, method: str) -> NormalizedWindow:
    x, feats, label = _columns(window)
    if x.shape[0] < 2:
        raise DataError("normalization needs at least two time points")
    values = normalize_array(x, method)
    return NormalizedWindow(
        feats, values, method,
        x.min(axis=0), x.max(axis=0), x.mean(axis=0), x.std(axis=0), label,
    )


def minmax_normalize(window) -> NormalizedWindow:
    """x* = (x - min) / (max - min) per column, values in [0, 1]."""
    return _normalize(window, "minmax")


def mean_normalize(window) -> NormalizedWindow:
    """(x - mean) / (max - min) per column."""
    return _normalize(window, "mean")


def zscore_standardize(window) -> NormalizedWindow:
    """(x - mean) / std per column, population std."""
    return _normalize(window, "zscore")


def mean_subtract(window) -> NormalizedWindow:
    return _normalize(window, "meansub")


def normalize(window, method: str = "minmax") -> NormalizedWindow:
    if method not in METHODS:
        raise ValueError(f"unknown normalization {method!r}; choose from {METHODS}")
    return _normalize(window, method)


def fuse_features(windows: Sequence[Window]) -> Window:
    """Column-stack windows recorded over the same interval, keeping the given order."""
    if not windows:
        raise DataError("nothing to fuse")
    T = windows[0].T
    for w in windows:
        if w.T != T:
            raise DataError(f"cannot fuse windows of length {T} and {w.T}")
    labels = {w.label for w in windows if w.label is not None}
    if len(labels) > 1:
        raise DataError("fused windows carry different labels")
    feats = tuple(f for w in windows for f in w.features)
    values = np.concatenate([w.values for w in windows], axis=1)
    return Window(feats, values, labels.pop() if labels else None, length=windows[0].length)


def extract_window(trace: RawTrace, onset: int, length: int = WINDOW_LENGTH) -> Window:
    """``length`` samples starting at ``onset``; a short tail is padded by
    repeating the last sample."""
    if onset < 0 or onset >= trace.length:
        raise DataError(f"onset {onset} outside trace of length {trace.length}")
    x = trace.as_float()[onset:onset + length]
    if x.shape[0] < length:
        pad = np.repeat(x[-1:], length - x.shape[0], axis=0)
        x = np.concatenate([x, pad], axis=0)
    return Window(trace.features, x, trace.label, length=length)


def downsample(values: np.ndarray, stride: int) -> np.ndarray:
    """Keep every ``stride``-th time point along axis -2 (cadence ablation)."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    return values[..., ::stride, :]

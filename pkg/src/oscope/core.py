"""Domain types shared across oscope.

Traces are stored as unsigned 64-bit counters; every consumer downstream of
the store works in float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

WINDOW_LENGTH = 5000
TRAIN_FRACTION_NUM = 7
TRAIN_FRACTION_DEN = 10


class DataError(ValueError):
    """Raised when input data violates a structural precondition."""


@dataclass(frozen=True, order=True)
class FeatureId:
    syscall: str
    field: str

    def __str__(self) -> str:
        return f"{self.syscall}.{self.field}"

    @classmethod
    def parse(cls, text: str) -> "FeatureId":
        syscall, sep, fld = text.partition(".")
        if not sep or not syscall or not fld:
            raise DataError(f"feature must look like 'syscall.field', got {text!r}")
        return lookup_feature(syscall, fld)


PROCS = FeatureId("sysinfo", "procs")
F_BAVAIL = FeatureId("statvfs", "f_bavail")
AVPHYS_PAGES = FeatureId("sysconf", "_SC_AVPHYS_PAGES")
F_FFREE = FeatureId("statvfs", "f_ffree")
FREERAM = FeatureId("sysinfo", "freeram")

CATALOG: tuple[FeatureId, ...] = (PROCS, F_BAVAIL, AVPHYS_PAGES, F_FFREE, FREERAM)

_registry: dict[tuple[str, str], FeatureId] = {(f.syscall, f.field): f for f in CATALOG}


def register_feature(syscall: str, field_name: str) -> FeatureId:
    """Add a feature to the registry (the five catalog entries are always present)."""
    fid = FeatureId(syscall, field_name)
    _registry.setdefault((syscall, field_name), fid)
    return _registry[(syscall, field_name)]


def lookup_feature(syscall: str, field_name: str) -> FeatureId:
    try:
        return _registry[(syscall, field_name)]
    except KeyError:
        raise DataError(f"unknown feature {syscall}.{field_name}") from None


def registered_features() -> tuple[FeatureId, ...]:
    return tuple(_registry.values())


@dataclass(frozen=True)
class BehaviorLabel:
    id: int
    name: str


@dataclass(frozen=True)
class DeviceMeta:
    model: str
    os_version: str = ""
    hostname: str = ""

    def __post_init__(self):
        if not self.model:
            raise DataError("device model must be non-empty")


@dataclass(frozen=True, eq=False)
class RawTrace:
    """Multivariate counter time series, ``samples`` has shape (T_raw, n).

    ``onsets`` carries ground-truth behavior start indices for synthetic
    traces; ``timestamps_us`` holds measured sample times from the collector.
    Neither is part of the trace file format body.
    """

    features: tuple[FeatureId, ...]
    sample_interval: int
    start_time: int
    samples: np.ndarray
    device: DeviceMeta
    label: BehaviorLabel | None = None
    onsets: tuple[int, ...] = ()
    timestamps_us: np.ndarray | None = None

    def __post_init__(self):
        feats = tuple(self.features)
        object.__setattr__(self, "features", feats)
        if len(feats) < 1:
            raise DataError("trace needs at least one feature")
        if self.sample_interval <= 0:
            raise DataError("sample_interval must be positive")
        s = np.asarray(self.samples)
        if s.ndim != 2 or s.shape[0] < 1 or s.shape[1] != len(feats):
            raise DataError(
                f"samples must be (T_raw>=1, {len(feats)}), got {s.shape}"
            )
        if s.dtype != np.uint64:
            if np.issubdtype(s.dtype, np.floating) or np.issubdtype(s.dtype, np.signedinteger):
                if (s < 0).any():
                    raise DataError("counter samples must be non-negative")
            s = s.astype(np.uint64)
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def length(self) -> int:
        return self.samples.shape[0]

    def as_float(self) -> np.ndarray:
        return self.samples.astype(np.float64)

    def __eq__(self, other):
        if not isinstance(other, RawTrace):
            return NotImplemented
        return (
            self.features == other.features
            and self.sample_interval == other.sample_interval
            and self.start_time == other.start_time
            and self.device == other.device
            and self.label == other.label
            and np.array_equal(self.samples, other.samples)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Window:
    """A (T, n) float64 slice of a trace, T = 5000 unless ``length`` overrides it.

    Pass ``length=None`` to accept any T (ablation experiments).
    """

    features: tuple[FeatureId, ...]
    values: np.ndarray
    label: BehaviorLabel | None = None
    length: int | None = WINDOW_LENGTH

    def __post_init__(self):
        feats = tuple(self.features)
        object.__setattr__(self, "features", feats)
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[1] != len(feats):
            raise DataError(f"window values must be (T, {len(feats)}), got {v.shape}")
        if self.length is not None and v.shape[0] != self.length:
            raise DataError(f"window must have {self.length} rows, got {v.shape[0]}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Dataset:
    windows: tuple[Window, ...]
    split_seed: int
    train_indices: tuple[int, ...]
    test_indices: tuple[int, ...]

    @property
    def labels(self) -> tuple[BehaviorLabel, ...]:
        """Distinct labels ordered by id."""
        seen = {w.label.id: w.label for w in self.windows}
        return tuple(seen[k] for k in sorted(seen))

    @property
    def n_classes(self) -> int:
        return len(self.labels)

    @property
    def features(self) -> tuple[FeatureId, ...]:
        return self.windows[0].features

    def arrays(self, indices: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        x = np.stack([self.windows[i].values for i in indices])
        y = np.array([self.windows[i].label.id for i in indices], dtype=np.int64)
        return x, y

    def train_arrays(self):
        return self.arrays(self.train_indices)

    def test_arrays(self):
        return self.arrays(self.test_indices)


def validate_labels(labels: Iterable[BehaviorLabel]) -> list[BehaviorLabel]:
    """Check ids are dense 0..c-1 and names unique; return labels sorted by id."""
    by_id: dict[int, BehaviorLabel] = {}
    for lab in labels:
        prev = by_id.setdefault(lab.id, lab)
        if prev != lab:
            raise DataError(f"label id {lab.id} used for both {prev.name!r} and {lab.name!r}")
    ordered = [by_id[k] for k in sorted(by_id)]
    if [l.id for l in ordered] != list(range(len(ordered))):
        raise DataError("label ids must be dense 0..c-1")
    names = [l.name for l in ordered]
    if len(set(names)) != len(names):
        raise DataError("label names must be unique")
    return ordered


def make_dataset(windows: Sequence[Window], seed: int) -> Dataset:
    """Stratified 7:3 train/test split, deterministic in (window order, seed).

    Each class contributes floor(0.7 * size) windows to training, chosen by a
    seeded shuffle of that class's windows; classes are visited in id order
    from one generator.
    """
    windows = tuple(windows)
    if not windows:
        raise DataError("dataset needs at least one window")
    feats = windows[0].features
    T = windows[0].T
    for i, w in enumerate(windows):
        if w.label is None:
            raise DataError(f"window {i} is unlabeled")
        if w.features != feats:
            raise DataError(f"window {i} has feature list {w.features}, expected {feats}")
        if w.T != T:
            raise DataError(f"window {i} has T={w.T}, expected {T}")
    validate_labels(w.label for w in windows)

    by_class: dict[int, list[int]] = {}
    for i, w in enumerate(windows):
        by_class.setdefault(w.label.id, []).append(i)

    rng = np.random.default_rng(np.uint64(seed % 2**64))
    train: list[int] = []
    test: list[int] = []
    for cls in sorted(by_class):
        idx = np.array(by_class[cls])
        perm = idx[rng.permutation(len(idx))]
        k = (TRAIN_FRACTION_NUM * len(idx)) // TRAIN_FRACTION_DEN
        train.extend(int(i) for i in perm[:k])
        test.extend(int(i) for i in perm[k:])
    return Dataset(windows, int(seed), tuple(sorted(train)), tuple(sorted(test)))


@dataclass(frozen=True)
class RankingReport:
    entries: tuple[tuple[FeatureId, float], ...]

    def __post_init__(self):
        d = [e[1] for e in self.entries]
        if any(x < 0 for x in d):
            raise DataError("average distances must be non-negative")
        if d != sorted(d):
            raise DataError("ranking entries must be sorted ascending")

    def to_rows(self) -> list[dict]:
        return [
            {"rank": i + 1, "syscall": f.syscall, "field": f.field, "avg_distance": d}
            for i, (f, d) in enumerate(self.entries)
        ]

    def to_text(self) -> str:
        rows = self.to_rows()
        head = ("Rank", "System Call", "Return Value", "Average Distance")
        body = [(str(r["rank"]), f"{r['syscall']}()", r["field"], f"{r['avg_distance']:.4f}") for r in rows]
        widths = [max(len(x) for x in col) for col in zip(head, *body)]
        fmt = "  ".join(f"{{:<{w}}}" for w in widths)
        lines = [fmt.format(*head), fmt.format(*("-" * w for w in widths))]
        lines += [fmt.format(*r) for r in body]
        return "\n".join(lines)


@dataclass(frozen=True, eq=False)
class ClassificationResult:
    label: BehaviorLabel
    probabilities: np.ndarray
    latency: float  # microseconds

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=np.float64)
        if (p < 0).any() or abs(p.sum() - 1.0) > 1e-6:
            raise DataError("probabilities must be non-negative and sum to 1")
        object.__setattr__(self, "probabilities", p)


def argmax_label(probabilities: np.ndarray, labels: Sequence[BehaviorLabel]) -> BehaviorLabel:
    """Most probable label; np.argmax already returns the lowest index on ties."""
    return labels[int(np.argmax(probabilities))]

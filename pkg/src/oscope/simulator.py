"""Synthetic labeled counter traces.

A behavior is a per-feature template of piecewise segments expressed in
feature "units". A trace is

    baseline + unit * (offset + template(t - onset) + AR(1) noise + drift * t
                       + background steps)

rounded and clamped to non-negative integer counters.

The default catalog names 17 behaviors across four common mobile apps.
Behaviors are grouped by coarse shape. Members of a group differ only in
the frequency of a short memory-churn oscillation at 0.05, 0.25 or 0.45
cycles per sample. These frequencies all alias to the same one when the
trace is decimated by 5, so coarser sampling cadences lose exactly the
information that separates group members.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from numba import njit

from .core import (
    CATALOG,
    WINDOW_LENGTH,
    BehaviorLabel,
    DataError,
    Dataset,
    DeviceMeta,
    FeatureId,
    RawTrace,
    Window,
    make_dataset,
)

SEGMENT_KINDS = ("hold", "ramp", "step", "spike", "decay", "oscillate")
SIM_DEVICE = DeviceMeta("oscope-sim", "synthetic", "simulator")
SIM_START_TIME = 1_700_000_000_000_000
SIM_INTERVAL_US = 1000


@dataclass(frozen=True)
class Segment:
    kind: str
    duration: int
    magnitude: float = 0.0
    period: float = 0.0

    def __post_init__(self):
        if self.kind not in SEGMENT_KINDS:
            raise DataError(f"unknown segment kind {self.kind!r}")
        if self.duration < 1:
            raise DataError("segment duration must be >= 1")
        if not np.isfinite(self.magnitude):
            raise DataError("segment magnitude must be finite")
        if self.kind == "oscillate" and not self.period > 0:
            raise DataError("oscillate segments need a positive period")


@dataclass(frozen=True)
class FeatureScale:
    """Counter level at rest and the size of one template unit."""

    baseline: float
    unit: float


DEFAULT_SCALES: dict[FeatureId, FeatureScale] = {
    CATALOG[0]: FeatureScale(450, 1),            # processes
    CATALOG[1]: FeatureScale(6_000_000, 16),     # free blocks
    CATALOG[2]: FeatureScale(900_000, 64),       # free pages
    CATALOG[3]: FeatureScale(3_000_000, 4),      # free inodes
    CATALOG[4]: FeatureScale(3.7e9, 262_144),    # free bytes
}


@dataclass(frozen=True)
class BehaviorSignature:
    label: BehaviorLabel
    templates: Mapping[FeatureId, tuple[Segment, ...]]
    onset_jitter: int = 100
    amplitude_jitter: float = 0.1
    scales: Mapping[FeatureId, FeatureScale] = field(default_factory=lambda: dict(DEFAULT_SCALES))

    def __post_init__(self):
        if not self.templates:
            raise DataError("signature needs at least one feature template")
        if self.onset_jitter < 0:
            raise DataError("onset_jitter must be >= 0")
        if not 0 <= self.amplitude_jitter < 1:
            raise DataError("amplitude_jitter must be in [0, 1)")
        for f in self.templates:
            if f not in self.scales:
                raise DataError(f"no scale for feature {f}")

    @property
    def features(self) -> tuple[FeatureId, ...]:
        return tuple(self.templates)

    @property
    def duration(self) -> int:
        return max(sum(s.duration for s in segs) for segs in self.templates.values())


@dataclass(frozen=True)
class NoiseModel:
    """Noise in template units.

    ``sigma`` is the stationary std of the AR(1) process. Background processes
    fire Poisson step events (``background_event_rate`` per second each) of
    normal size ``background_magnitude`` on a random feature.
    ``baseline_offset`` is the std of a per-trace, per-feature level shift.
    """

    ar1_rho: float = 0.9
    sigma: float = 1.0
    drift_per_sample: float = 0.0
    background_processes: int = 2
    background_event_rate: float = 0.2
    background_magnitude: float = 2.0
    baseline_offset: float = 50.0

    def __post_init__(self):
        if not 0 <= self.ar1_rho < 1:
            raise DataError("ar1_rho must be in [0, 1)")
        if self.sigma < 0 or self.background_processes < 0 or self.background_event_rate < 0:
            raise DataError("sigma, background_processes and background_event_rate must be >= 0")
        if self.baseline_offset < 0 or self.background_magnitude < 0:
            raise DataError("offset and background magnitudes must be >= 0")


QUIET = NoiseModel(sigma=0.0, background_processes=0, baseline_offset=0.0)


def render_segments(segments: Sequence[Segment], scale: float = 1.0, rng=None) -> np.ndarray:
    """Template values relative to rest level, one per sample.

    Oscillations start at a random phase when ``rng`` is given, else at zero.
    """
    parts = []
    level = 0.0
    for seg in segments:
        k = np.arange(1, seg.duration + 1, dtype=np.float64)
        mag = seg.magnitude * scale
        if seg.kind == "hold":
            vals = np.full(seg.duration, level)
        elif seg.kind == "step":
            level += mag
            vals = np.full(seg.duration, level)
        elif seg.kind == "ramp":
            vals = level + mag * k / seg.duration
            level += mag
        elif seg.kind == "spike":
            vals = np.full(seg.duration, level + mag)
        elif seg.kind == "decay":
            tau = seg.duration / 4.0
            vals = level + mag * (1 - np.exp(-k / tau)) / (1 - np.exp(-seg.duration / tau))
            level += mag
        else:  # oscillate
            phase = 0.0 if rng is None else rng.uniform(0, 2 * np.pi)
            vals = level + mag * np.sin(2 * np.pi * (k - 1) / seg.period + phase)
        parts.append(vals)
    return np.concatenate(parts) if parts else np.zeros(0)


@njit(cache=True)
def _ar1(innov, rho, first):
    out = np.empty_like(innov)
    out[0] = first
    for t in range(1, innov.shape[0]):
        out[t] = rho * out[t - 1] + innov[t]
    return out


def _noise(rng, noise: NoiseModel, length: int, n: int) -> np.ndarray:
    if noise.sigma == 0:
        return np.zeros((length, n))
    out = np.empty((length, n))
    scale = noise.sigma * np.sqrt(1 - noise.ar1_rho**2)
    for f in range(n):
        innov = rng.normal(0.0, scale, length)
        out[:, f] = _ar1(innov, noise.ar1_rho, rng.normal(0.0, noise.sigma))
    return out


def _background(rng, noise: NoiseModel, length: int, n: int, interval_us: int) -> np.ndarray:
    out = np.zeros((length, n))
    if noise.background_processes == 0 or noise.background_event_rate == 0:
        return out
    seconds = length * interval_us / 1e6
    count = rng.poisson(noise.background_processes * noise.background_event_rate * seconds)
    for _ in range(count):
        t = rng.integers(0, length)
        f = rng.integers(0, n)
        out[t:, f] += rng.normal(0.0, noise.background_magnitude)
    return out


def _render(
    sequence: Sequence[BehaviorSignature],
    gap_range: tuple[int, int],
    noise: NoiseModel,
    seed,
    length: int,
    lead: int,
    label: BehaviorLabel | None,
    interval_us: int,
) -> RawTrace:
    if not 1 <= len(sequence) <= 3:
        raise DataError("a trace holds 1 to 3 behaviors")
    feats = sequence[0].features
    for sig in sequence[1:]:
        if sig.features != feats:
            raise DataError("all signatures in a sequence must cover the same features")
    lo, hi = gap_range
    if lo < 0 or hi < lo:
        raise DataError("gap_range must satisfy 0 <= lo <= hi")
    rng = np.random.default_rng(seed)
    n = len(feats)
    scales = sequence[0].scales

    starts = [lead + int(rng.integers(0, sequence[0].onset_jitter + 1))]
    amps = [1.0 + rng.uniform(-sequence[0].amplitude_jitter, sequence[0].amplitude_jitter)]
    for prev, sig in zip(sequence, sequence[1:]):
        gap = int(rng.integers(lo, hi + 1))
        starts.append(starts[-1] + prev.duration + gap)
        amps.append(1.0 + rng.uniform(-sig.amplitude_jitter, sig.amplitude_jitter))
    end = starts[-1] + sequence[-1].duration
    if end > length:
        raise DataError(f"behaviors end at sample {end}, beyond trace length {length}")

    signal = np.zeros((length, n))
    for sig, start, amp in zip(sequence, starts, amps):
        for f, feat in enumerate(feats):
            tmpl = render_segments(sig.templates[feat], amp, rng)
            if tmpl.size == 0:
                continue
            signal[start:start + tmpl.size, f] += tmpl
            signal[start + tmpl.size:, f] += tmpl[-1]

    offsets = rng.normal(0.0, noise.baseline_offset, n) if noise.baseline_offset > 0 else np.zeros(n)
    signal += offsets
    signal += _noise(rng, noise, length, n)
    if noise.drift_per_sample:
        signal += noise.drift_per_sample * np.arange(length)[:, None]
    signal += _background(rng, noise, length, n, interval_us)

    base = np.array([scales[f].baseline for f in feats])
    unit = np.array([scales[f].unit for f in feats])
    counters = np.clip(np.rint(base + unit * signal), 0, None).astype(np.uint64)

    if label is None:
        if len(sequence) == 1:
            label = sequence[0].label
        else:
            label = BehaviorLabel(sequence[0].label.id, "+".join(s.label.name for s in sequence))
    return RawTrace(feats, interval_us, SIM_START_TIME, counters, SIM_DEVICE, label, tuple(starts))


def synth_trace(
    signature: BehaviorSignature,
    noise: NoiseModel,
    seed,
    length: int = WINDOW_LENGTH,
    lead: int = 0,
    interval_us: int = SIM_INTERVAL_US,
) -> RawTrace:
    """One labeled trace. The template starts at ``lead`` plus a uniform
    jitter in [0, onset_jitter]; ``trace.onsets`` records where."""
    return _render([signature], (0, 0), noise, seed, length, lead, None, interval_us)


def synth_multi_behavior(
    sequence: Sequence[BehaviorSignature],
    gap_range: tuple[int, int],
    noise: NoiseModel,
    seed,
    length: int = WINDOW_LENGTH,
    lead: int = 0,
    label: BehaviorLabel | None = None,
    interval_us: int = SIM_INTERVAL_US,
) -> RawTrace:
    """1 to 3 behaviors back to back, separated by uniform random gaps.

    The composite label defaults to the names joined with '+' (id of the
    first behavior); pass ``label`` to set dataset-wide ids.
    """
    return _render(sequence, gap_range, noise, seed, length, lead, label, interval_us)


def synth_traces(
    signatures: Sequence[BehaviorSignature],
    noise: NoiseModel,
    per_class: int,
    seed: int,
    length: int = WINDOW_LENGTH,
) -> list[RawTrace]:
    if len(signatures) < 2:
        raise DataError("need at least two signatures")
    if per_class < 2:
        raise DataError("per_class must be >= 2")
    children = np.random.SeedSequence(seed).spawn(len(signatures) * per_class)
    traces = []
    for c, sig in enumerate(signatures):
        for r in range(per_class):
            traces.append(synth_trace(sig, noise, children[c * per_class + r], length))
    return traces


def traces_to_windows(traces: Sequence[RawTrace]) -> list[Window]:
    return [Window(t.features, t.as_float(), t.label, length=None) for t in traces]


def synth_dataset(
    signatures: Sequence[BehaviorSignature],
    noise: NoiseModel,
    per_class: int,
    seed: int,
    length: int = WINDOW_LENGTH,
) -> Dataset:
    """``per_class`` windows per signature, split 7:3 per class."""
    traces = synth_traces(signatures, noise, per_class, seed, length)
    return make_dataset(traces_to_windows(traces), seed)


# -- default catalog ---------------------------------------------------------

_OSC = "osc"
_OSC_LEN = 400
_OSC_AMP = 14.0
OSC_PERIODS = (20.0, 4.0, 1 / 0.45)

# Coarse shapes, one list per catalog feature in CATALOG order. Every shape
# opens with a process-count jump so the start is detectable.
_GROUPS: dict[str, list[list]] = {
    "G0": [
        [("step", 300, 28), ("ramp", 600, -10), ("hold", 200, 0)],
        [("hold", 120, 0), ("ramp", 500, -35), ("hold", 200, 0)],
        [("step", 150, -30), _OSC, ("decay", 700, 18)],
        [("hold", 100, 0), ("step", 400, -28), ("ramp", 500, 8)],
        [("ramp", 150, -25), _OSC, ("decay", 700, 20)],
    ],
    "G1": [
        [("step", 200, 25), ("step", 500, 8), ("ramp", 500, -20)],
        [("hold", 300, 0), ("step", 600, -18), ("ramp", 300, -10)],
        [("spike", 100, -25), _OSC, ("ramp", 800, -22)],
        [("ramp", 600, -15), ("hold", 600, 0)],
        [("step", 200, -15), _OSC, ("ramp", 600, -25)],
    ],
    "G2": [
        [("step", 150, 30), ("decay", 900, -25)],
        [("ramp", 800, -45)],
        [("ramp", 200, -15), _OSC, ("step", 400, -25), ("decay", 400, 25)],
        [("hold", 400, 0), ("ramp", 300, -20), ("ramp", 300, 20)],
        [("step", 100, -35), _OSC, ("hold", 300, 0), ("ramp", 500, 10)],
    ],
    "G3": [
        [("spike", 80, 30), ("step", 400, 10), ("hold", 400, 0)],
        [("hold", 500, 0), ("step", 300, -30), ("ramp", 500, 15)],
        [("step", 200, -20), _OSC, ("spike", 150, -20), ("ramp", 600, -15)],
        [("step", 700, -10), ("step", 500, -10)],
        [("decay", 200, -30), _OSC, ("step", 300, 15), ("ramp", 400, -20)],
    ],
    "G4": [
        [("step", 500, 25), ("step", 500, -15)],
        [("ramp", 300, -20), ("hold", 400, 0), ("ramp", 300, -20)],
        [("decay", 200, -35), _OSC, ("hold", 200, 0), ("ramp", 500, 30)],
        [("spike", 200, -25), ("ramp", 800, -12)],
        [("step", 200, -20), _OSC, ("decay", 600, -20)],
    ],
    "G5": [
        [("step", 100, 25), ("ramp", 700, 15), ("hold", 300, 0)],
        [("step", 150, -25), ("ramp", 700, 25)],
        [("ramp", 100, -10), _OSC, ("step", 300, -30), ("ramp", 500, 20)],
        [("hold", 250, 0), ("step", 300, -35), ("decay", 500, 30)],
        [("step", 150, -10), _OSC, ("ramp", 700, -35)],
    ],
    "G6": [
        [("step", 250, 28), ("spike", 150, 15), ("ramp", 700, -15)],
        [("hold", 600, 0), ("ramp", 600, -50)],
        [("step", 50, -20), _OSC, ("decay", 800, -20)],
        [("ramp", 400, -30), ("hold", 300, 0), ("step", 300, -10)],
        [("ramp", 200, -20), _OSC, ("spike", 200, 20), ("ramp", 500, 25)],
    ],
}

# (behavior name, coarse group, oscillation period index)
_BEHAVIORS = [
    ("Telegram: Launch App", "G0", 0),
    ("Telegram: View Messages", "G1", 0),
    ("Telegram: Send Messages", "G1", 1),
    ("Telegram: View Profile", "G0", 1),
    ("YouTube: Launch App", "G2", 0),
    ("YouTube: Refresh Videos", "G2", 1),
    ("YouTube: View Videos", "G2", 2),
    ("YouTube: Short Videos", "G3", 0),
    ("YouTube: Search Videos", "G3", 1),
    ("Gmail: Launch App", "G4", 0),
    ("Gmail: View Emails", "G4", 1),
    ("Gmail: Send Emails", "G4", 2),
    ("Gmail: Search Emails", "G5", 0),
    ("OneNote: Launch App", "G5", 1),
    ("OneNote: View Notes", "G6", 0),
    ("OneNote: Create Notes", "G6", 1),
    ("OneNote: Search Notes", "G0", 2),
]


def _materialize(raw: list, period: float) -> tuple[Segment, ...]:
    segs = []
    for item in raw:
        if item == _OSC:
            segs.append(Segment("oscillate", _OSC_LEN, _OSC_AMP, period))
        else:
            segs.append(Segment(*item))
    return tuple(segs)


def default_catalog(onset_jitter: int = 100, amplitude_jitter: float = 0.1) -> list[BehaviorSignature]:
    """The 17-behavior catalog over the five catalog features."""
    sigs = []
    for i, (name, group, p) in enumerate(_BEHAVIORS):
        templates = {
            feat: _materialize(raw, OSC_PERIODS[p]) for feat, raw in zip(CATALOG, _GROUPS[group])
        }
        sigs.append(BehaviorSignature(BehaviorLabel(i, name), templates, onset_jitter, amplitude_jitter))
    return sigs


def catalog_groups() -> dict[str, list[int]]:
    """Label ids sharing each coarse shape."""
    out: dict[str, list[int]] = {}
    for i, (_, g, _) in enumerate(_BEHAVIORS):
        out.setdefault(g, []).append(i)
    return out


def multi_behavior_catalog(signatures: Sequence[BehaviorSignature]) -> list[tuple[BehaviorLabel, list[BehaviorSignature]]]:
    """41 composite classes: every single behavior, 12 pairs and 12 triples.

    Pairs are (i, i+5) and triples (i, i+3, i+8), indices mod 17, for
    i = 0..11. The choice is arbitrary but fixed.
    """
    c = len(signatures)
    seqs: list[list[BehaviorSignature]] = [[s] for s in signatures]
    seqs += [[signatures[i], signatures[(i + 5) % c]] for i in range(12)]
    seqs += [[signatures[i], signatures[(i + 3) % c], signatures[(i + 8) % c]] for i in range(12)]
    return [
        (BehaviorLabel(k, "+".join(s.label.name for s in seq)), seq) for k, seq in enumerate(seqs)
    ]


def synth_multi_dataset(
    signatures: Sequence[BehaviorSignature],
    noise: NoiseModel,
    per_class: int,
    seed: int,
    gap_range: tuple[int, int] = (50, 200),
    length: int = WINDOW_LENGTH,
) -> Dataset:
    classes = multi_behavior_catalog(signatures)
    children = np.random.SeedSequence(seed).spawn(len(classes) * per_class)
    windows = []
    for c, (label, seq) in enumerate(classes):
        for r in range(per_class):
            t = synth_multi_behavior(seq, gap_range, noise, children[c * per_class + r], length, label=label)
            windows.append(Window(t.features, t.as_float(), label, length=None))
    return make_dataset(windows, seed)


# -- catalog files -------------------------------------------------------------

def catalog_to_dict(signatures: Sequence[BehaviorSignature], noise: NoiseModel | None = None) -> dict:
    feats = signatures[0].features
    scales = signatures[0].scales
    doc = {
        "format_version": 1,
        "features": [{"syscall": f.syscall, "field": f.field} for f in feats],
        "sample_interval_us": SIM_INTERVAL_US,
        "device": {"model": SIM_DEVICE.model, "os_version": SIM_DEVICE.os_version, "hostname": SIM_DEVICE.hostname},
        "scales": {str(f): {"baseline": scales[f].baseline, "unit": scales[f].unit} for f in feats},
        "signatures": [
            {
                "id": s.label.id,
                "name": s.label.name,
                "onset_jitter": s.onset_jitter,
                "amplitude_jitter": s.amplitude_jitter,
                "templates": {
                    str(f): [[g.kind, g.duration, g.magnitude] + ([g.period] if g.kind == "oscillate" else [])
                             for g in segs]
                    for f, segs in s.templates.items()
                },
            }
            for s in signatures
        ],
    }
    if noise is not None:
        doc["noise"] = asdict(noise)
    return doc


def catalog_from_dict(doc: Mapping) -> tuple[list[BehaviorSignature], NoiseModel | None]:
    try:
        feats = [FeatureId.parse(f"{f['syscall']}.{f['field']}") for f in doc["features"]]
        scales = dict(DEFAULT_SCALES)
        for key, sc in doc.get("scales", {}).items():
            scales[FeatureId.parse(key)] = FeatureScale(float(sc["baseline"]), float(sc["unit"]))
        sigs = []
        for s in doc["signatures"]:
            templates = {}
            for f in feats:
                raw = s["templates"][str(f)]
                templates[f] = tuple(
                    Segment(r[0], int(r[1]), float(r[2]), float(r[3]) if len(r) > 3 else 0.0) for r in raw
                )
            sigs.append(BehaviorSignature(
                BehaviorLabel(int(s["id"]), str(s["name"])),
                templates,
                int(s.get("onset_jitter", 100)),
                float(s.get("amplitude_jitter", 0.1)),
                scales,
            ))
        noise = NoiseModel(**doc["noise"]) if "noise" in doc else None
    except (KeyError, TypeError, ValueError, IndexError) as e:
        raise DataError(f"malformed signature catalog: {e}") from None
    return sigs, noise


def load_catalog(path: str | Path) -> tuple[list[BehaviorSignature], NoiseModel | None]:
    return catalog_from_dict(json.loads(Path(path).read_text()))


def save_catalog(path: str | Path, signatures: Sequence[BehaviorSignature], noise: NoiseModel | None = None) -> None:
    Path(path).write_text(json.dumps(catalog_to_dict(signatures, noise), indent=1) + "\n")


def with_jitter(signatures: Sequence[BehaviorSignature], onset_jitter: int | None = None,
                amplitude_jitter: float | None = None) -> list[BehaviorSignature]:
    out = []
    for s in signatures:
        kw = {}
        if onset_jitter is not None:
            kw["onset_jitter"] = onset_jitter
        if amplitude_jitter is not None:
            kw["amplitude_jitter"] = amplitude_jitter
        out.append(replace(s, **kw))
    return out

"""Raw trace to classification: onset, window, downsample, normalize, classify."""
from __future__ import annotations

import numpy as np

from .collector import OnsetDetectorConfig, detect_onset
from .core import ClassificationResult, DataError, RawTrace
from .dtwknn import knn_classify
from .nn.model import classify as nn_classify
from .signalprep import downsample, extract_window, normalize_array


# Training windows open with 0..100 samples of baseline before the behavior
# (the simulator's onset jitter); start live windows mid-way into that range.
PRE_ONSET = 50


class IncompatibleModel(DataError):
    pass


class NoOnset(DataError):
    pass


def select_features(trace: RawTrace, model) -> RawTrace:
    """``trace`` restricted to the model's features, in the model's order."""
    if trace.sample_interval != model.sample_interval_us:
        raise IncompatibleModel(
            f"trace interval {trace.sample_interval} us, model expects {model.sample_interval_us} us")
    missing = [str(f) for f in model.features if f not in trace.features]
    if missing:
        raise IncompatibleModel(f"trace lacks model features: {', '.join(missing)}")
    cols = [trace.features.index(f) for f in model.features]
    return RawTrace(model.features, trace.sample_interval, trace.start_time,
                    trace.samples[:, cols], trace.device, trace.label)


def locate(values: np.ndarray, force: bool, detector: OnsetDetectorConfig) -> tuple[int, bool]:
    """Onset index and whether the head of the trace was used instead."""
    try:
        onset = detect_onset(values, detector)
    except DataError:
        onset = None  # too short for a baseline
    if onset is None:
        if not force:
            raise NoOnset("no behavior onset detected")
        return 0, True
    return onset, False


def classify_trace(model, trace: RawTrace, force: bool = False,
                   detector: OnsetDetectorConfig = OnsetDetectorConfig(),
                   pre_onset: int = PRE_ONSET) -> tuple[ClassificationResult, int | None, bool]:
    sub = select_features(trace, model)
    onset, forced = locate(sub.as_float(), force, detector)
    window = extract_window(sub, max(onset - pre_onset, 0), model.raw_length).values
    x = normalize_array(downsample(window, model.stride), model.norm)
    if model.kind == "dtwknn":
        result = knn_classify(model.knn, x)
    else:
        result = nn_classify(model, x)
    return result, (None if forced else onset), forced

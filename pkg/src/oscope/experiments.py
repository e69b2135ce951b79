"""Train/evaluate helpers shared by the CLI, the service and the benchmarks."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .core import DataError, Dataset
from .dtwknn import DEFAULT_BAND, KnnModel, nearest, vote
from .nn.model import BUILDERS, Model, TrainConfig
from .nn.train import TrainLog, evaluate, train
from .signalprep import METHODS, downsample, normalize_array

log = logging.getLogger(__name__)


def prepare(x: np.ndarray, norm: str = "minmax", stride: int = 1) -> np.ndarray:
    """Downsample raw (B, T, n) windows by ``stride`` and normalize each column."""
    if norm not in METHODS:
        raise DataError(f"unknown normalization {norm!r}")
    return normalize_array(downsample(np.asarray(x, dtype=np.float64), stride), norm)


def confusion(truth: np.ndarray, pred: np.ndarray, c: int) -> np.ndarray:
    conf = np.zeros((c, c), dtype=np.int64)
    np.add.at(conf, (np.asarray(truth), np.asarray(pred)), 1)
    return conf


@dataclass
class EvalReport:
    model: str
    accuracy: float
    confusion: np.ndarray
    predictions: np.ndarray
    seconds: float
    extra: dict = field(default_factory=dict)


def fit_network(ds: Dataset, kind: str = "cnn_gru", norm: str = "minmax", stride: int = 1,
                config: TrainConfig | None = None, dtype=np.float32, progress=None,
                device_model: str = "") -> tuple[Model, TrainLog]:
    config = config or TrainConfig()
    xtr, ytr = ds.train_arrays()
    xtr = prepare(xtr, norm, stride).astype(dtype)
    model = BUILDERS[kind](xtr.shape[2], ds.n_classes, T=xtr.shape[1], seed=config.seed,
                          dtype=dtype, labels=ds.labels)
    model.features = ds.features
    model.norm, model.stride, model.device_model = norm, stride, device_model
    history = train(model, (xtr, ytr), config, progress)
    return model, history


def eval_network(model: Model, ds: Dataset) -> EvalReport:
    t0 = time.perf_counter()
    xte, yte = ds.test_arrays()
    x = prepare(xte, model.norm, model.stride).astype(model.dtype)
    acc, pred, conf = evaluate(model, x, yte)
    return EvalReport(model.kind, acc, conf, pred, time.perf_counter() - t0)


def fit_knn(ds: Dataset, norm: str = "minmax", stride: int = 1, k: int = 1,
            band: int | None = DEFAULT_BAND) -> KnnModel:
    xtr, ytr = ds.train_arrays()
    return KnnModel(prepare(xtr, norm, stride), ytr, ds.labels, k=k, band=band, features=ds.features)


def eval_knn(knn: KnnModel, ds: Dataset, norm: str = "minmax", stride: int = 1,
             ks=(1, 3, 5, 7), progress=None) -> EvalReport:
    """Sweep K from one exact search per query; the report carries the best K.

    Ties between K values go to the smaller K.
    """
    t0 = time.perf_counter()
    xte, yte = ds.test_arrays()
    x = prepare(xte, norm, stride)
    kmax = min(max(ks), knn.windows.shape[0])
    ks = tuple(k for k in ks if k <= kmax)
    c = len(knn.label_set)
    preds = {k: np.empty(len(yte), dtype=np.int64) for k in ks}
    for i, q in enumerate(x):
        ids, dist = nearest(knn, q, kmax)
        labs = knn.labels[ids]
        for k in ks:
            preds[k][i] = vote(labs[:k], dist[:k], c)[0]
        if progress is not None:
            progress(i + 1, len(yte))
    accs = {k: float((preds[k] == yte).mean()) for k in ks}
    best = max(ks, key=lambda k: (accs[k], -k))
    knn.k = best
    return EvalReport("dtwknn", accs[best], confusion(yte, preds[best], c), preds[best],
                      time.perf_counter() - t0, {"k_accuracy": accs, "best_k": best})

"""Adam and the mini-batch training loop."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..core import DataError, Dataset
from .model import Model, TrainConfig, cross_entropy, predict

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


class Adam:
    """Adam with bias correction folded into the step size."""

    def __init__(self, params: list[np.ndarray], lr=0.001, beta1=0.9, beta2=0.999, eps=1e-7):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        lr_t = self.lr * np.sqrt(1 - self.b2**self.t) / (1 - self.b1**self.t)
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= (lr_t * m / (np.sqrt(v) + self.eps)).astype(p.dtype, copy=False)


@dataclass
class TrainLog:
    loss: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    initial_loss: float = float("nan")


def _arrays(model: Model, data):
    if isinstance(data, Dataset):
        x, y = data.train_arrays()
        return model.preprocess(x), y
    x, y = data
    return np.asarray(x, dtype=model.dtype), np.asarray(y, dtype=np.int64)


def train(model: Model, data, config: TrainConfig | None = None, progress=None) -> TrainLog:
    """Fit ``model`` in place with Adam on mean sparse cross-entropy.

    ``data`` is a Dataset (its training split is preprocessed with the
    model's norm/stride) or an ``(x, y)`` pair of ready inputs. Each epoch
    reshuffles with a generator seeded from ``config.seed``; results are
    reproducible bit for bit for a given seed and dtype.
    """
    config = config or model.train_config
    model.train_config = config
    x, y = _arrays(model, data)
    if len(x) == 0:
        raise DataError("training set is empty")
    if y.min() < 0 or y.max() >= model.n_classes:
        raise DataError(f"labels must lie in 0..{model.n_classes - 1}")

    params = [p for _, _, p in model.parameters()]
    opt = Adam(params, config.learning_rate, config.beta1, config.beta2, config.epsilon)
    rng = np.random.default_rng(config.seed)
    result = TrainLog()
    result.initial_loss = cross_entropy(predict(model, x), y)

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(x))
        total, correct = 0.0, 0
        for s in range(0, len(x), config.batch_size):
            idx = order[s:s + config.batch_size]
            loss, p = model.loss_and_grad(x[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch + 1}, batch starting {s}")
            opt.step([model.layers[i].grads[name] for i, name, _ in model.parameters()])
            total += loss * len(idx)
            correct += int((p.argmax(axis=1) == y[idx]).sum())
        result.loss.append(total / len(x))
        result.accuracy.append(correct / len(x))
        result.seconds.append(time.perf_counter() - t0)
        log.info("epoch %d/%d loss %.4f acc %.4f (%.1fs)", epoch + 1, config.epochs,
                 result.loss[-1], result.accuracy[-1], result.seconds[-1])
        if progress is not None:
            progress(epoch + 1, result)
    return result


def evaluate(model: Model, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Accuracy, predicted ids and confusion matrix (rows = truth) on ready inputs."""
    pred = predict(model, x).argmax(axis=1)
    c = model.n_classes
    conf = np.zeros((c, c), dtype=np.int64)
    np.add.at(conf, (y, pred), 1)
    return float((pred == y).mean()), pred, conf

"""Central finite-difference check of every trainable parameter."""
from __future__ import annotations

import numpy as np

from ..core import BehaviorLabel
from .model import Model, build_cnn_gru, cross_entropy
from .layers import LayerSpec


def _loss(model: Model, x, y) -> float:
    return cross_entropy(model.forward(x, training=True), y)


def gradcheck(model: Model, x: np.ndarray, y: np.ndarray, h: float = 1e-5,
              floor: float = 1e-8) -> tuple[float, dict[str, float]]:
    """Max relative error |g_a - g_n| / max(|g_a|, |g_n|, floor) over all parameters.

    Runs the training-mode forward (batch-statistics batchnorm) in float64.
    Returns the overall maximum and the maximum per ``layer_index.param``.
    """
    if model.dtype is not np.float64:
        raise ValueError("gradcheck needs a float64 model")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    saved = [{k: v.copy() for k, v in layer.state.items()} for layer in model.layers]
    model.loss_and_grad(x, y)
    analytic = {(i, name): model.layers[i].grads[name].copy() for i, name, _ in model.parameters()}

    worst: dict[str, float] = {}
    for i, name, p in model.parameters():
        ga = analytic[(i, name)]
        flat = p.reshape(-1)
        err = 0.0
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + h
            up = _loss(model, x, y)
            flat[j] = old - h
            down = _loss(model, x, y)
            flat[j] = old
            gn = (up - down) / (2 * h)
            a = ga.reshape(-1)[j]
            err = max(err, abs(a - gn) / max(abs(a), abs(gn), floor))
        worst[f"{i}.{type(model.layers[i]).__name__}.{name}"] = err
    for layer, st in zip(model.layers, saved):
        layer.state.update(st)
    return max(worst.values()), worst


def small_cnn_gru(n: int = 2, c: int = 3, T: int = 40, seed: int = 0) -> Model:
    """Reduced CNN-GRU exercising every layer type of the full network.

    With T=40 the full fold of 10 leaves too few steps for three conv/pool
    blocks, so time is folded by 1: 40 -> 39 -> 19 -> 18 -> 8 -> 7 -> 3.
    """
    return build_cnn_gru(n, c, T, seed=seed, dtype=np.float64, fold=1,
                         filters=(4, 5, 6), gru_units=4)


def dense_only(n: int = 2, c: int = 3, T: int = 40, seed: int = 0) -> Model:
    specs = [LayerSpec("flatten", {}, "FC"), LayerSpec("dense", {"units": c}, "Output")]
    return Model(specs, (T, n), tuple(BehaviorLabel(i, f"class_{i}") for i in range(c)),
                 np.float64, seed, "dense")


def run_suite(seed: int = 0, batch: int = 6) -> dict[str, float]:
    """Gradient check of the dense-only and reduced CNN-GRU models."""
    rng = np.random.default_rng(seed)
    out = {}
    for name, model in (("dense_only", dense_only(seed=seed)), ("cnn_gru_small", small_cnn_gru(seed=seed))):
        x = rng.normal(size=(batch,) + tuple(model.input_shape))
        y = rng.integers(0, model.n_classes, size=batch)
        out[name], _ = gradcheck(model, x, y)
    return out

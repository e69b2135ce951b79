"""Sequential models: the CNN-GRU classifier and a GRU-only baseline."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ..core import WINDOW_LENGTH, BehaviorLabel, ClassificationResult, DataError, FeatureId, argmax_label
from ..signalprep import downsample, normalize_array
from .layers import LAYER_TYPES, Layer, LayerSpec


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Model:
    """Layer specs plus instantiated layers and preprocessing metadata.

    ``norm`` and ``stride`` describe how raw windows are turned into inputs;
    ``window_length`` is the input length after downsampling.
    """

    specs: list[LayerSpec]
    input_shape: tuple[int, int]
    labels: tuple[BehaviorLabel, ...]
    dtype: type = np.float64
    seed: int = 0
    kind: str = "cnn_gru"
    features: tuple[FeatureId, ...] = ()
    sample_interval_us: int = 1000
    norm: str = "minmax"
    stride: int = 1
    device_model: str = ""
    train_config: TrainConfig = field(default_factory=TrainConfig)
    layers: list[Layer] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self.layers:
            self.layers = instantiate(self.specs, self.input_shape, self.seed, self.dtype)

    @property
    def n_classes(self) -> int:
        return len(self.labels)

    @property
    def window_length(self) -> int:
        return self.input_shape[0]

    @property
    def raw_length(self) -> int:
        """Samples at the recording cadence covered by one input window."""
        return self.input_shape[0] * self.stride

    def shapes(self) -> list[tuple]:
        out, shape = [], tuple(self.input_shape)
        for layer in self.layers:
            shape = layer.output_shape(shape)
            out.append(shape)
        return out

    def block_shapes(self) -> list[tuple[str, tuple]]:
        """Output shape of each named block (last layer tagged with the block)."""
        ends: dict[str, tuple] = {}
        order: list[str] = []
        for spec, shape in zip(self.specs, self.shapes()):
            if spec.block not in ends:
                order.append(spec.block)
            ends[spec.block] = shape
        return [(b, ends[b]) for b in order]

    def parameters(self):
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params.items():
                yield i, name, arr

    def n_parameters(self) -> int:
        return sum(a.size for _, _, a in self.parameters())

    def logits(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 3 or x.shape[1:] != tuple(self.input_shape):
            raise DataError(f"expected batch of shape (B, {self.input_shape[0]}, {self.input_shape[1]}), got {x.shape}")
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        return softmax(self.logits(x, training))

    def backward(self, grad_logits: np.ndarray) -> None:
        g = grad_logits
        for layer in reversed(self.layers):
            g = layer.backward(g)

    def loss_and_grad(self, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
        """Training-mode forward, mean cross-entropy, gradients into layers."""
        p = self.forward(x, training=True)
        loss = cross_entropy(p, y)
        self.backward(cross_entropy_grad(p, y))
        return loss, p

    def preprocess(self, values: np.ndarray) -> np.ndarray:
        """Raw (B, T_raw, n) or (T_raw, n) counter windows to model inputs."""
        v = np.asarray(values, dtype=np.float64)
        v = normalize_array(downsample(v, self.stride), self.norm)
        return v.astype(self.dtype, copy=False)


def instantiate(specs: Sequence[LayerSpec], input_shape, seed: int, dtype) -> list[Layer]:
    rng = np.random.default_rng(seed)
    layers, shape = [], tuple(input_shape)
    for spec in specs:
        layer = LAYER_TYPES[spec.kind](shape, rng=rng, dtype=dtype, **spec.options)
        shape = layer.output_shape(shape)
        layers.append(layer)
    return layers


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(p: np.ndarray, y: np.ndarray) -> float:
    """Mean sparse categorical cross-entropy."""
    picked = p[np.arange(len(y)), y]
    return float(-np.log(np.clip(picked, 1e-300, None)).mean())


def cross_entropy_grad(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of the mean cross-entropy w.r.t. the softmax logits: (p - onehot) / B."""
    g = p.copy()
    g[np.arange(len(y)), y] -= 1
    return g / len(y)


def _labels(c: int, labels) -> tuple[BehaviorLabel, ...]:
    if labels is None:
        return tuple(BehaviorLabel(i, f"class_{i}") for i in range(c))
    labels = tuple(labels)
    if len(labels) != c:
        raise DataError("label list length differs from class count")
    return labels


def cnn_gru_specs(
    n: int,
    c: int,
    T: int = WINDOW_LENGTH,
    fold: int = 10,
    filters: Sequence[int] = (64, 128, 256),
    conv_kernel: int = 2,
    conv_padding: str = "valid",
    pool: int = 3,
    pool_stride: int = 2,
    gru_units: int = 128,
    leaky_slope: float = 0.3,
    gru_batchnorm: bool = True,
) -> list[LayerSpec]:
    specs = [LayerSpec("reshape", {"fold": fold}, "Reshape")]
    for i, f in enumerate(filters, start=1):
        blk = f"Conv_{i}"
        specs += [
            LayerSpec("conv1d", {"filters": f, "kernel": conv_kernel, "stride": 1, "padding": conv_padding,
                                 "activation": "leaky_relu", "leaky_slope": leaky_slope}, blk),
            LayerSpec("maxpool1d", {"pool": pool, "stride": pool_stride}, blk),
            LayerSpec("batchnorm", {"momentum": 0.99, "eps": 1e-3}, blk),
        ]
    specs.append(LayerSpec("gru", {"units": gru_units}, "GRU"))
    if gru_batchnorm:
        specs.append(LayerSpec("batchnorm", {"momentum": 0.99, "eps": 1e-3}, "GRU"))
    specs += [
        LayerSpec("flatten", {}, "FC"),
        LayerSpec("dense", {"units": c, "activation": "softmax"}, "Output"),
    ]
    return specs


def build_cnn_gru(n: int, c: int, T: int = WINDOW_LENGTH, seed: int = 0, dtype=np.float64,
                  labels=None, **arch) -> Model:
    """Reshape(10) -> 3 x [Conv(k=2) + LeakyReLU(0.3) -> MaxPool(3, 2) -> BN]
    -> GRU(128) -> BN -> flatten -> Dense(c, softmax).

    For T=5000 the block outputs are (500, 10n), (249, 64), (123, 128),
    (60, 256), (60, 128), (7680,), (c,).
    """
    if n < 1:
        raise DataError("feature count n must be >= 1")
    if c < 2:
        raise DataError("class count c must be >= 2")
    specs = cnn_gru_specs(n, c, T, **arch)
    return Model(specs, (T, n), _labels(c, labels), dtype, seed, "cnn_gru")


def build_gru_only(n: int, c: int, T: int = WINDOW_LENGTH, seed: int = 0, dtype=np.float64,
                   labels=None, fold: int = 10, gru_units: int = 128) -> Model:
    """Reshape -> GRU -> BN -> flatten -> Dense; the recurrent-only ablation."""
    if n < 1 or c < 2:
        raise DataError("need n >= 1 and c >= 2")
    specs = [
        LayerSpec("reshape", {"fold": fold}, "Reshape"),
        LayerSpec("gru", {"units": gru_units}, "GRU"),
        LayerSpec("batchnorm", {"momentum": 0.99, "eps": 1e-3}, "GRU"),
        LayerSpec("flatten", {}, "FC"),
        LayerSpec("dense", {"units": c, "activation": "softmax"}, "Output"),
    ]
    return Model(specs, (T, n), _labels(c, labels), dtype, seed, "gru_only")


BUILDERS = {"cnn_gru": build_cnn_gru, "gru_only": build_gru_only}


def predict(model: Model, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Inference-mode class probabilities for preprocessed inputs."""
    out = []
    for i in range(0, len(x), batch_size):
        out.append(model.forward(x[i:i + batch_size], training=False))
    return np.concatenate(out) if out else np.zeros((0, model.n_classes))


def classify(model: Model, window) -> ClassificationResult:
    """Classify one already-normalized window at the model's input resolution."""
    values = np.asarray(getattr(window, "values", window), dtype=model.dtype)
    if values.shape != tuple(model.input_shape):
        raise DataError(f"window shape {values.shape} does not match model input {tuple(model.input_shape)}")
    t0 = time.perf_counter()
    p = model.forward(values[None], training=False)[0].astype(np.float64)
    latency = (time.perf_counter() - t0) * 1e6
    p = p / p.sum()
    return ClassificationResult(argmax_label(p, model.labels), p, max(latency, 1e-3))

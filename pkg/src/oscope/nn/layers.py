"""Layers with hand-written backward passes.

Activations are (batch, time, channels) arrays. Every layer caches what its
backward pass needs during ``forward`` and fills ``grads`` (same keys as
``params``) during ``backward``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    options: dict[str, Any] = field(default_factory=dict)
    block: str = ""

    KINDS = ("reshape", "conv1d", "maxpool1d", "batchnorm", "gru", "flatten", "dense")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        for key in ("filters", "kernel", "stride", "units", "fold", "pool"):
            if key in self.options and int(self.options[key]) < 1:
                raise ValueError(f"{self.kind}: {key} must be positive")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "options": dict(self.options), "block": self.block}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(d["kind"], dict(d.get("options", {})), d.get("block", ""))


def glorot_uniform(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.state: dict[str, np.ndarray] = {}  # non-trainable, serialized

    def output_shape(self, shape: tuple) -> tuple:
        raise NotImplementedError

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, g: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Reshape(Layer):
    """Fold ``fold`` consecutive time steps into the channel axis."""

    def __init__(self, in_shape, fold: int, **_):
        super().__init__()
        self.fold = int(fold)
        T, n = in_shape
        if T % self.fold:
            raise ValueError(f"time length {T} not divisible by fold {self.fold}")

    def output_shape(self, shape):
        T, n = shape
        return (T // self.fold, n * self.fold)

    def forward(self, x, training):
        self._shape = x.shape
        B, T, n = x.shape
        return x.reshape(B, T // self.fold, n * self.fold)

    def backward(self, g):
        return g.reshape(self._shape)


class Conv1D(Layer):
    """1-D convolution, 'valid' or 'same' padding, optional LeakyReLU."""

    def __init__(self, in_shape, filters, kernel, rng, dtype, stride=1, padding="valid",
                 activation=None, leaky_slope=0.3, **_):
        super().__init__()
        L, C = in_shape
        self.K, self.S, self.F = int(kernel), int(stride), int(filters)
        if padding == "same":
            total = max((-(-L // self.S) - 1) * self.S + self.K - L, 0)
            self.pad = (total // 2, total - total // 2)
        elif padding == "valid":
            self.pad = (0, 0)
        else:
            raise ValueError(f"unknown padding {padding!r}")
        if activation not in (None, "leaky_relu", "linear"):
            raise ValueError(f"unsupported conv activation {activation!r}")
        self.leaky = activation == "leaky_relu"
        self.alpha = float(leaky_slope)
        self.params["kernel"] = glorot_uniform(rng, (self.K, C, self.F), self.K * C, self.K * self.F, dtype)
        self.params["bias"] = np.zeros(self.F, dtype=dtype)

    def output_shape(self, shape):
        L, C = shape
        Lp = L + sum(self.pad)
        if Lp < self.K:
            raise ValueError(f"conv kernel {self.K} longer than input {Lp}")
        return ((Lp - self.K) // self.S + 1, self.F)

    def _taps(self, Lout):
        return [slice(k, k + self.S * (Lout - 1) + 1, self.S) for k in range(self.K)]

    def forward(self, x, training):
        if any(self.pad):
            x = np.pad(x, ((0, 0), self.pad, (0, 0)))
        self._x = x
        B, Lp, C = x.shape
        Lout = (Lp - self.K) // self.S + 1
        W = self.params["kernel"]
        z = np.broadcast_to(self.params["bias"], (B, Lout, self.F)).copy()
        for k, sl in enumerate(self._taps(Lout)):
            z += x[:, sl, :] @ W[k]
        self._z = z
        if self.leaky:
            return np.where(z > 0, z, self.alpha * z)
        return z

    def backward(self, g):
        x, z, W = self._x, self._z, self.params["kernel"]
        if self.leaky:
            g = np.where(z > 0, g, self.alpha * g)
        B, Lout, F = g.shape
        C = x.shape[2]
        g2 = g.reshape(-1, F)
        dW = np.empty_like(W)
        dx = np.zeros_like(x)
        for k, sl in enumerate(self._taps(Lout)):
            xs = x[:, sl, :]
            dW[k] = xs.reshape(-1, C).T @ g2
            dx[:, sl, :] += g @ W[k].T
        self.grads["kernel"] = dW
        self.grads["bias"] = g2.sum(axis=0)
        lo, hi = self.pad
        if lo or hi:
            dx = dx[:, lo:dx.shape[1] - hi, :]
        return dx


class MaxPool1D(Layer):
    def __init__(self, in_shape, pool, stride=None, padding="valid", **_):
        super().__init__()
        if padding != "valid":
            raise ValueError("max pooling supports 'valid' padding only")
        self.P = int(pool)
        self.S = int(stride) if stride else self.P

    def output_shape(self, shape):
        L, C = shape
        if L < self.P:
            raise ValueError(f"pool size {self.P} longer than input {L}")
        return ((L - self.P) // self.S + 1, C)

    def forward(self, x, training):
        B, L, C = x.shape
        Lout = (L - self.P) // self.S + 1
        self._shape = x.shape
        self._slices = [slice(p, p + self.S * (Lout - 1) + 1, self.S) for p in range(self.P)]
        stack = np.stack([x[:, sl, :] for sl in self._slices])
        self._arg = stack.argmax(axis=0)
        return np.take_along_axis(stack, self._arg[None], axis=0)[0]

    def backward(self, g):
        dx = np.zeros(self._shape, dtype=g.dtype)
        for p, sl in enumerate(self._slices):
            dx[:, sl, :] += np.where(self._arg == p, g, 0)
        return dx


class BatchNorm(Layer):
    """Normalizes the last axis using statistics over all other axes."""

    def __init__(self, in_shape, dtype, momentum=0.99, eps=1e-3, **_):
        super().__init__()
        C = in_shape[-1]
        self.momentum = float(momentum)
        self.eps = float(eps)
        self.params["gamma"] = np.ones(C, dtype=dtype)
        self.params["beta"] = np.zeros(C, dtype=dtype)
        self.state["moving_mean"] = np.zeros(C, dtype=dtype)
        self.state["moving_var"] = np.ones(C, dtype=dtype)

    def output_shape(self, shape):
        return shape

    def forward(self, x, training):
        axes = tuple(range(x.ndim - 1))
        if training:
            mu = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            self.state["moving_mean"] = m * self.state["moving_mean"] + (1 - m) * mu
            self.state["moving_var"] = m * self.state["moving_var"] + (1 - m) * var
        else:
            mu, var = self.state["moving_mean"], self.state["moving_var"]
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv
        self._xhat, self._inv = xhat, inv
        return self.params["gamma"] * xhat + self.params["beta"]

    def backward(self, g):
        # batch-statistics gradient; only valid after a training-mode forward
        xhat, inv = self._xhat, self._inv
        axes = tuple(range(g.ndim - 1))
        N = g.size // g.shape[-1]
        self.grads["gamma"] = (g * xhat).sum(axis=axes)
        self.grads["beta"] = g.sum(axis=axes)
        dxhat = g * self.params["gamma"]
        return (inv / N) * (N * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))


class GRU(Layer):
    """Gated recurrent unit returning the full hidden sequence.

    Gates are ordered (update z, reset r, candidate n) in the fused weights and
    the reset gate acts after the recurrent projection:

        z = sigmoid(x Wz + bz + h Uz + cz)
        r = sigmoid(x Wr + br + h Ur + cr)
        n = tanh(x Wn + bn + r * (h Un + cn))
        h' = z * h + (1 - z) * n

    The initial state is zero.
    """

    def __init__(self, in_shape, units, rng, dtype, **_):
        super().__init__()
        L, C = in_shape
        H = self.H = int(units)
        self.params["kernel"] = glorot_uniform(rng, (C, 3 * H), C, 3 * H, dtype)
        self.params["recurrent_kernel"] = glorot_uniform(rng, (H, 3 * H), H, 3 * H, dtype)
        self.params["bias"] = np.zeros(3 * H, dtype=dtype)
        self.params["recurrent_bias"] = np.zeros(3 * H, dtype=dtype)

    def output_shape(self, shape):
        return (shape[0], self.H)

    def forward(self, x, training):
        B, L, C = x.shape
        H = self.H
        W, U = self.params["kernel"], self.params["recurrent_kernel"]
        xw = (x.reshape(-1, C) @ W).reshape(B, L, 3 * H) + self.params["bias"]
        h = np.zeros((B, H), dtype=x.dtype)
        out = np.empty((B, L, H), dtype=x.dtype)
        zs, rs, ns, hun = (np.empty((B, L, H), dtype=x.dtype) for _ in range(4))
        for t in range(L):
            hu = h @ U + self.params["recurrent_bias"]
            a = xw[:, t]
            z = sigmoid(a[:, :H] + hu[:, :H])
            r = sigmoid(a[:, H:2 * H] + hu[:, H:2 * H])
            n = np.tanh(a[:, 2 * H:] + r * hu[:, 2 * H:])
            h = z * h + (1 - z) * n
            out[:, t] = h
            zs[:, t], rs[:, t], ns[:, t], hun[:, t] = z, r, n, hu[:, 2 * H:]
        self._cache = (x, out, zs, rs, ns, hun)
        return out

    def backward(self, g):
        x, out, zs, rs, ns, hun = self._cache
        B, L, C = x.shape
        H = self.H
        U = self.params["recurrent_kernel"]
        dU = np.zeros_like(U)
        dc = np.zeros(3 * H, dtype=g.dtype)
        dxw = np.empty((B, L, 3 * H), dtype=g.dtype)
        dh = np.zeros((B, H), dtype=g.dtype)
        dhu = np.empty((B, 3 * H), dtype=g.dtype)
        for t in range(L - 1, -1, -1):
            h_prev = out[:, t - 1] if t > 0 else np.zeros((B, H), dtype=g.dtype)
            z, r, n = zs[:, t], rs[:, t], ns[:, t]
            gh = g[:, t] + dh
            dn = gh * (1 - z) * (1 - n * n)
            dz = gh * (h_prev - n) * z * (1 - z)
            dr = dn * hun[:, t] * r * (1 - r)
            dxw[:, t, :H] = dz
            dxw[:, t, H:2 * H] = dr
            dxw[:, t, 2 * H:] = dn
            dhu[:, :H] = dz
            dhu[:, H:2 * H] = dr
            dhu[:, 2 * H:] = dn * r
            dU += h_prev.T @ dhu
            dc += dhu.sum(axis=0)
            dh = gh * z + dhu @ U.T
        flat = dxw.reshape(-1, 3 * H)
        self.grads["kernel"] = x.reshape(-1, C).T @ flat
        self.grads["bias"] = flat.sum(axis=0)
        self.grads["recurrent_kernel"] = dU
        self.grads["recurrent_bias"] = dc
        return (flat @ self.params["kernel"].T).reshape(B, L, C)


class Flatten(Layer):
    def __init__(self, in_shape, **_):
        super().__init__()

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x, training):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g):
        return g.reshape(self._shape)


class Dense(Layer):
    """Affine map on (batch, features). A softmax activation is applied by the
    model together with the loss, so this layer always outputs logits."""

    def __init__(self, in_shape, units, rng, dtype, activation=None, **_):
        super().__init__()
        (D,) = in_shape
        self.units = int(units)
        self.activation = activation
        self.params["kernel"] = glorot_uniform(rng, (D, self.units), D, self.units, dtype)
        self.params["bias"] = np.zeros(self.units, dtype=dtype)

    def output_shape(self, shape):
        return (self.units,)

    def forward(self, x, training):
        self._x = x
        return x @ self.params["kernel"] + self.params["bias"]

    def backward(self, g):
        self.grads["kernel"] = self._x.T @ g
        self.grads["bias"] = g.sum(axis=0)
        return g @ self.params["kernel"].T


LAYER_TYPES = {
    "reshape": Reshape,
    "conv1d": Conv1D,
    "maxpool1d": MaxPool1D,
    "batchnorm": BatchNorm,
    "gru": GRU,
    "flatten": Flatten,
    "dense": Dense,
}

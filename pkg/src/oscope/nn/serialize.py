"""OSC1 model container.

Layout: magic ``b"OSC1"``, uint64 little-endian manifest length, UTF-8 JSON
manifest, then raw little-endian float64 blobs in manifest order.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from ..core import BehaviorLabel, DataError, FeatureId
from .layers import LayerSpec
from .model import Model, TrainConfig, instantiate

MAGIC = b"OSC1"
CONTAINER_VERSION = 1


class ModelFormatError(DataError):
    pass


def _manifest_common(kind: str, labels, features, sample_interval_us, norm, stride, device_model, seed) -> dict:
    return {
        "container_version": CONTAINER_VERSION,
        "kind": kind,
        "labels": [{"id": lb.id, "name": lb.name} for lb in labels],
        "features": [str(f) for f in features],
        "sample_interval_us": int(sample_interval_us),
        "norm": norm,
        "stride": int(stride),
        "device_model": device_model,
        "seed": int(seed),
    }


def _pack(manifest: dict, blobs: list[tuple[str, np.ndarray]]) -> bytes:
    table, offset, parts = [], 0, []
    for name, arr in blobs:
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        offset += len(data)
        parts.append(data)
    manifest = dict(manifest, blobs=table)
    head = json.dumps(manifest, sort_keys=True).encode()
    return MAGIC + struct.pack("<Q", len(head)) + head + b"".join(parts)


def _unpack(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if data[:4] != MAGIC:
        raise ModelFormatError("not an OSC1 model file (bad magic)")
    if len(data) < 12:
        raise ModelFormatError("truncated header")
    (hlen,) = struct.unpack("<Q", data[4:12])
    try:
        manifest = json.loads(data[12:12 + hlen])
    except ValueError as e:
        raise ModelFormatError(f"bad manifest: {e}") from e
    if manifest.get("container_version") != CONTAINER_VERSION:
        raise ModelFormatError(f"unsupported container version {manifest.get('container_version')}")
    body = memoryview(data)[12 + hlen:]
    blobs = {}
    for entry in manifest["blobs"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(body):
            raise ModelFormatError(f"blob {entry['name']} runs past end of file")
        arr = np.frombuffer(body[start:start + nbytes], dtype="<f8").reshape(entry["shape"])
        blobs[entry["name"]] = arr.copy()
    return manifest, blobs


def model_to_bytes(model: Model) -> bytes:
    manifest = _manifest_common(model.kind, model.labels, model.features, model.sample_interval_us,
                                model.norm, model.stride, model.device_model, model.seed)
    manifest.update({
        "specs": [s.to_dict() for s in model.specs],
        "input_shape": list(model.input_shape),
        "dtype": np.dtype(model.dtype).name,
        "train_config": model.train_config.to_dict(),
    })
    blobs = []
    for i, layer in enumerate(model.layers):
        for name, arr in layer.params.items():
            blobs.append((f"{i}/params/{name}", arr))
        for name, arr in layer.state.items():
            blobs.append((f"{i}/state/{name}", arr))
    return _pack(manifest, blobs)


def knn_to_bytes(knn, norm: str = "minmax", stride: int = 1, sample_interval_us: int = 1000,
                 device_model: str = "", seed: int = 0) -> bytes:
    manifest = _manifest_common("dtwknn", knn.label_set, knn.features, sample_interval_us,
                                norm, stride, device_model, seed)
    manifest.update({"k": knn.k, "band": knn.band, "aggregation": knn.aggregation,
                     "input_shape": list(knn.windows.shape[1:])})
    return _pack(manifest, [("windows", knn.windows), ("labels", knn.labels.astype(np.float64))])


def _labels(manifest) -> tuple[BehaviorLabel, ...]:
    return tuple(BehaviorLabel(d["id"], d["name"]) for d in manifest["labels"])


def from_bytes(data: bytes):
    """Decode a container into a ``Model`` or a ``LoadedKnn``."""
    manifest, blobs = _unpack(data)
    features = tuple(FeatureId.parse(f) for f in manifest["features"])
    if manifest["kind"] == "dtwknn":
        from ..dtwknn import KnnModel

        knn = KnnModel(blobs["windows"], blobs["labels"].astype(np.int64), _labels(manifest),
                       k=manifest["k"], band=manifest["band"], aggregation=manifest["aggregation"],
                       features=features)
        return LoadedKnn(knn, manifest)
    dtype = np.dtype(manifest["dtype"]).type
    specs = [LayerSpec.from_dict(d) for d in manifest["specs"]]
    shape = tuple(manifest["input_shape"])
    layers = instantiate(specs, shape, manifest["seed"], dtype)
    for i, layer in enumerate(layers):
        for group, store in (("params", layer.params), ("state", layer.state)):
            for name in list(store):
                key = f"{i}/{group}/{name}"
                if key not in blobs:
                    raise ModelFormatError(f"missing blob {key}")
                if blobs[key].shape != store[name].shape:
                    raise ModelFormatError(f"blob {key} has shape {blobs[key].shape}, expected {store[name].shape}")
                store[name] = blobs[key].astype(dtype)
    return Model(specs, shape, _labels(manifest), dtype, manifest["seed"], manifest["kind"], features,
                 manifest["sample_interval_us"], manifest["norm"], manifest["stride"],
                 manifest["device_model"], TrainConfig(**manifest["train_config"]), layers)


class LoadedKnn:
    """A deserialized DTW-KNN model with its preprocessing metadata."""

    kind = "dtwknn"

    def __init__(self, knn, manifest: dict):
        self.knn = knn
        self.labels = knn.label_set
        self.features = knn.features
        self.sample_interval_us = manifest["sample_interval_us"]
        self.norm = manifest["norm"]
        self.stride = manifest["stride"]
        self.device_model = manifest["device_model"]
        self.seed = manifest["seed"]
        self.input_shape = tuple(manifest["input_shape"])

    @property
    def raw_length(self) -> int:
        return self.input_shape[0] * self.stride


def manifest_of(data: bytes) -> dict:
    manifest, _ = _unpack(data)
    return manifest


def save(path: str | Path, payload: bytes) -> None:
    """Atomically write an encoded container."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=".tmp-", suffix=".osc")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(path, model: Model) -> None:
    save(path, model_to_bytes(model))


def load(path: str | Path):
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read model {path}: {e}") from e
    return from_bytes(data)

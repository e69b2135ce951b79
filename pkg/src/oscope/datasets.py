"""Dataset files: a zip of .npy arrays written with fixed metadata so the
same dataset always produces the same bytes."""
from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from .core import BehaviorLabel, DataError, Dataset, FeatureId, Window

_EPOCH = (1980, 1, 1, 0, 0, 0)


def _entry(zf: zipfile.ZipFile, name: str, arr: np.ndarray) -> None:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    info = zipfile.ZipInfo(name + ".npy", date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, buf.getvalue())


def save_dataset(path: str | Path, ds: Dataset, sample_interval_us: int = 1000, meta: dict | None = None) -> None:
    """Windows are stored as raw uint64 counters when every value is a
    non-negative integer, else as float64."""
    values = np.stack([w.values for w in ds.windows])
    if np.all(values >= 0) and np.all(values == np.rint(values)) and values.max(initial=0) < 2**53:
        values = values.astype(np.uint64)
    header = {
        "labels": [[lb.id, lb.name] for lb in ds.labels],
        "features": [str(f) for f in ds.features],
        "split_seed": int(ds.split_seed),
        "sample_interval_us": int(sample_interval_us),
        "meta": meta or {},
    }
    with zipfile.ZipFile(path, "w") as zf:
        _entry(zf, "values", values)
        _entry(zf, "labels", np.array([w.label.id for w in ds.windows], dtype=np.int64))
        _entry(zf, "train", np.asarray(ds.train_indices, dtype=np.int64))
        _entry(zf, "test", np.asarray(ds.test_indices, dtype=np.int64))
        _entry(zf, "header", np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8))


def load_dataset(path: str | Path) -> tuple[Dataset, dict]:
    try:
        with np.load(path, allow_pickle=False) as z:
            values = z["values"].astype(np.float64)
            labels = z["labels"]
            train, test = z["train"], z["test"]
            header = json.loads(z["header"].tobytes().decode())
    except (OSError, KeyError, ValueError, zipfile.BadZipFile) as e:
        raise DataError(f"cannot read dataset {path}: {e}") from e
    label_set = {i: BehaviorLabel(i, name) for i, name in header["labels"]}
    features = tuple(FeatureId.parse(f) for f in header["features"])
    windows = [Window(features, v, label_set[int(y)], length=None) for v, y in zip(values, labels)]
    ds = Dataset(tuple(windows), header["split_seed"], tuple(int(i) for i in train), tuple(int(i) for i in test))
    return ds, header

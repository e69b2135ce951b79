"""File-per-trace store with an append-only index.

Layout under the store root::

    traces/<id>.trace            uploaded body, byte for byte
    index.jsonl                  one JSON line per accepted upload
    results/<id>__<model>.json   classification results
"""
from __future__ import annotations

import json
import os
import secrets
import tempfile
import threading
import time
from pathlib import Path


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    _fsync_dir(path.parent)


def _fsync_dir(path: Path) -> None:
    try:
        fd = os.open(path, os.O_RDONLY)
    except OSError:
        return
    try:
        os.fsync(fd)
    except OSError:
        pass
    finally:
        os.close(fd)


def valid_id(trace_id: str) -> bool:
    return len(trace_id) == 32 and all(c in "0123456789abcdef" for c in trace_id)


class TraceStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.traces_dir = self.root / "traces"
        self.results_dir = self.root / "results"
        self.index_path = self.root / "index.jsonl"
        self.traces_dir.mkdir(parents=True, exist_ok=True)
        self.results_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._index: dict[str, dict] = {}
        self._load_index()

    def _load_index(self) -> None:
        if not self.index_path.exists():
            return
        with open(self.index_path, encoding="utf-8") as fh:
            for line in fh:
                try:
                    entry = json.loads(line)
                except ValueError:
                    continue  # torn final line after a crash
                if (self.traces_dir / f"{entry['id']}.trace").exists():
                    self._index[entry["id"]] = entry

    def __len__(self) -> int:
        return len(self._index)

    def __contains__(self, trace_id: str) -> bool:
        return trace_id in self._index

    def put(self, body: bytes, meta: dict) -> str:
        """Persist ``body`` durably and return a fresh 128-bit hex id."""
        with self._lock:
            trace_id = secrets.token_hex(16)
            while trace_id in self._index:
                trace_id = secrets.token_hex(16)
            _atomic_write(self.traces_dir / f"{trace_id}.trace", body)
            entry = dict(meta, id=trace_id, received_at_us=time.time_ns() // 1000, nbytes=len(body))
            with open(self.index_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            self._index[trace_id] = entry
            return trace_id

    def entry(self, trace_id: str) -> dict | None:
        return self._index.get(trace_id)

    def raw(self, trace_id: str) -> bytes:
        return (self.traces_dir / f"{trace_id}.trace").read_bytes()

    def _result_path(self, trace_id: str, model_id: str) -> Path:
        return self.results_dir / f"{trace_id}__{model_id}.json"

    def put_result(self, trace_id: str, model_id: str, result: dict) -> None:
        """Store a classification; rewriting the same key is idempotent."""
        data = json.dumps(result, sort_keys=True).encode()
        _atomic_write(self._result_path(trace_id, model_id), data)

    def results(self, trace_id: str) -> dict[str, dict]:
        out = {}
        for path in sorted(self.results_dir.glob(f"{trace_id}__*.json")):
            out[path.stem.split("__", 1)[1]] = json.loads(path.read_text())
        return out

"""Canonical trace file format, shared by the wire protocol and the store.

Line 1 is a one-line JSON metadata object; each following line is one sample
instant as comma-separated unsigned decimal counters in feature order.
UTF-8, LF line endings.
"""
from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np

from .core import BehaviorLabel, DataError, DeviceMeta, RawTrace, register_feature

FORMAT_VERSION = 1


class TraceFormatError(DataError):
    pass


def trace_metadata(trace: RawTrace) -> dict:
    meta = {
        "format_version": FORMAT_VERSION,
        "features": [{"syscall": f.syscall, "field": f.field} for f in trace.features],
        "sample_interval_us": int(trace.sample_interval),
        "start_time_unix_us": int(trace.start_time),
    }
    if trace.label is not None:
        meta["label"] = {"id": trace.label.id, "name": trace.label.name}
    meta["device"] = {
        "model": trace.device.model,
        "os_version": trace.device.os_version,
        "hostname": trace.device.hostname,
    }
    if trace.onsets:
        meta["onsets"] = [int(o) for o in trace.onsets]
    return meta


def dumps(trace: RawTrace) -> bytes:
    buf = io.StringIO()
    buf.write(json.dumps(trace_metadata(trace), separators=(",", ":")))
    buf.write("\n")
    # uint64 -> str keeps full precision; savetxt would go through floats
    for row in trace.samples.tolist():
        buf.write(",".join(map(str, row)))
        buf.write("\n")
    return buf.getvalue().encode("utf-8")


def _parse_meta(line: str) -> dict:
    try:
        meta = json.loads(line)
    except json.JSONDecodeError as e:
        raise TraceFormatError(f"metadata line is not JSON: {e}") from None
    if not isinstance(meta, dict):
        raise TraceFormatError("metadata must be a JSON object")
    if meta.get("format_version") != FORMAT_VERSION:
        raise TraceFormatError(f"unsupported format_version {meta.get('format_version')!r}")
    for key in ("features", "sample_interval_us", "start_time_unix_us", "device"):
        if key not in meta:
            raise TraceFormatError(f"metadata missing {key!r}")
    return meta


def loads(data: bytes | str) -> RawTrace:
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError:
            raise TraceFormatError("trace is not valid UTF-8") from None
    else:
        text = data
    if "\r" in text:
        raise TraceFormatError("trace must use LF line endings")
    # every line, the last included, ends in LF; a missing one means truncation
    if not text.endswith("\n"):
        raise TraceFormatError("trace is truncated (no final line feed)")
    lines = text[:-1].split("\n")
    if len(lines) < 2:
        raise TraceFormatError("trace needs a metadata line and at least one sample")
    meta = _parse_meta(lines[0])
    try:
        features = tuple(
            register_feature(str(f["syscall"]), str(f["field"])) for f in meta["features"]
        )
        dev = meta["device"]
        device = DeviceMeta(str(dev["model"]), str(dev.get("os_version", "")), str(dev.get("hostname", "")))
        label = None
        if meta.get("label") is not None:
            label = BehaviorLabel(int(meta["label"]["id"]), str(meta["label"]["name"]))
        interval = int(meta["sample_interval_us"])
        start = int(meta["start_time_unix_us"])
        onsets = tuple(int(o) for o in meta.get("onsets", ()))
    except (KeyError, TypeError, ValueError) as e:
        raise TraceFormatError(f"bad metadata: {e}") from None

    n = len(features)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != n:
            raise TraceFormatError(f"line {lineno}: expected {n} values, got {len(parts)}")
        try:
            vals = [int(p) for p in parts]
        except ValueError:
            raise TraceFormatError(f"line {lineno}: non-integer value") from None
        if any(v < 0 or v >= 2**64 for v in vals) or any(not (p.isascii() and p.isdigit()) for p in parts):
            raise TraceFormatError(f"line {lineno}: values must be unsigned decimal")
        rows.append(vals)
    samples = np.array(rows, dtype=np.uint64).reshape(len(rows), n)
    try:
        return RawTrace(features, interval, start, samples, device, label, onsets)
    except DataError as e:
        raise TraceFormatError(str(e)) from None


def write(path: str | Path, trace: RawTrace) -> None:
    Path(path).write_bytes(dumps(trace))


def read(path: str | Path) -> RawTrace:
    return loads(Path(path).read_bytes())

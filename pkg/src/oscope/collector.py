"""Host-side sampler for syscall return values.

Reads the catalog counters (sysinfo procs/freeram, statvfs f_bavail/f_ffree,
sysconf _SC_AVPHYS_PAGES) at a fixed cadence, locates behavior onsets and
ships traces to the ingestion service.
"""
from __future__ import annotations

import ctypes
import ctypes.util
import errno
import logging
import os
import platform
import socket
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import traceio
from .core import CATALOG, PROCS, DataError, DeviceMeta, FeatureId, RawTrace

log = logging.getLogger(__name__)

ENDPOINT_ENV = "OSCOPE_ENDPOINT"
DEFAULT_ENDPOINT = "http://127.0.0.1:8000"


class SamplingError(RuntimeError):
    def __init__(self, feature: FeatureId | None, code: int, message: str = ""):
        self.feature = feature
        self.code = code
        super().__init__(message or f"{feature}: {os.strerror(code) if code else 'sampling failed'} (errno {code})")


class UploadError(RuntimeError):
    def __init__(self, status: int | None, body: str, message: str = ""):
        self.status = status
        self.body = body
        super().__init__(message or f"upload failed (status {status}): {body[:200]}")


class _SysInfo(ctypes.Structure):
    _fields_ = [
        ("uptime", ctypes.c_long),
        ("loads", ctypes.c_ulong * 3),
        ("totalram", ctypes.c_ulong),
        ("freeram", ctypes.c_ulong),
        ("sharedram", ctypes.c_ulong),
        ("bufferram", ctypes.c_ulong),
        ("totalswap", ctypes.c_ulong),
        ("freeswap", ctypes.c_ulong),
        ("procs", ctypes.c_ushort),
        ("pad", ctypes.c_ushort),
        ("totalhigh", ctypes.c_ulong),
        ("freehigh", ctypes.c_ulong),
        ("mem_unit", ctypes.c_uint),
        ("_f", ctypes.c_char * 8),
    ]


_libc = None


def _sysinfo() -> _SysInfo:
    global _libc
    if _libc is None:
        name = ctypes.util.find_library("c")
        if name is None:
            raise SamplingError(PROCS, errno.ENOSYS, "libc not found; sysinfo unavailable")
        _libc = ctypes.CDLL(name, use_errno=True)
    info = _SysInfo()
    if _libc.sysinfo(ctypes.byref(info)) != 0:
        raise SamplingError(PROCS, ctypes.get_errno())
    return info


def default_statvfs_path() -> str:
    """Prefer a user data partition, fall back to the root filesystem."""
    return "/data" if os.path.isdir("/data") else "/"


def sample_once(features: Sequence[FeatureId] = CATALOG, statvfs_path: str | None = None) -> np.ndarray:
    """One reading of every feature, in order, within a single burst.

    Raises SamplingError (carrying the errno) if any read fails; partial
    vectors are never returned.
    """
    path = statvfs_path or default_statvfs_path()
    info = vfs = None
    out = np.empty(len(features), dtype=np.uint64)
    for i, feat in enumerate(features):
        try:
            if feat.syscall == "sysinfo":
                if info is None:
                    info = _sysinfo()
                val = getattr(info, feat.field)
            elif feat.syscall == "statvfs":
                if vfs is None:
                    vfs = os.statvfs(path)
                val = getattr(vfs, feat.field)
            elif feat.syscall == "sysconf":
                val = os.sysconf(feat.field.lstrip("_"))
            else:
                raise SamplingError(feat, errno.ENOSYS, f"no reader for {feat}")
        except OSError as e:
            raise SamplingError(feat, e.errno or 0) from e
        except (AttributeError, ValueError) as e:
            raise SamplingError(feat, errno.EINVAL, f"{feat}: {e}") from e
        if val < 0:
            raise SamplingError(feat, errno.ERANGE, f"{feat}: negative value {val}")
        out[i] = val
    return out


def host_device() -> DeviceMeta:
    uname = platform.uname()
    model = uname.machine or "unknown"
    try:
        with open("/sys/devices/virtual/dmi/id/product_name") as fh:
            product = fh.read().strip()
        if product:
            model = product
    except OSError:
        pass
    return DeviceMeta(model, f"{uname.system} {uname.release}", socket.gethostname())


@dataclass(frozen=True)
class SamplerConfig:
    features: tuple[FeatureId, ...] = CATALOG
    interval: int = 1000          # microseconds
    duration: float = 5.0         # seconds
    statvfs_path: str | None = None

    def __post_init__(self):
        if self.interval < 100:
            raise DataError("interval must be >= 100 us")
        if self.duration < 1:
            raise DataError("duration must be >= 1 s")
        if not self.features:
            raise DataError("no features selected")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * 1e6 / self.interval))


def record(config: SamplerConfig, device: DeviceMeta | None = None,
           clock: Callable[[], int] = time.perf_counter_ns) -> RawTrace:
    """Sample at a fixed cadence using absolute deadlines (start + i * interval).

    A failed sample repeats the previous row; more than 1% failures abort.
    """
    n = config.n_samples
    path = config.statvfs_path or default_statvfs_path()
    rows = np.empty((n, len(config.features)), dtype=np.uint64)
    stamps = np.empty(n, dtype=np.int64)
    failures = 0
    last_error: SamplingError | None = None
    step_ns = config.interval * 1000
    wall_start = time.time_ns() // 1000
    t0 = clock()
    for i in range(n):
        deadline = t0 + i * step_ns
        while True:
            remaining = deadline - clock()
            if remaining <= 0:
                break
            if remaining > 200_000:
                time.sleep((remaining - 150_000) / 1e9)
        stamps[i] = (clock() - t0) // 1000
        try:
            rows[i] = sample_once(config.features, path)
        except SamplingError as e:
            failures += 1
            last_error = e
            if failures > 0.01 * n:
                raise SamplingError(e.feature, e.code,
                                    f"sampling aborted after {failures} failures; last: {e}") from e
            if i == 0:
                raise
            rows[i] = rows[i - 1]
    if failures:
        log.warning("%d sample(s) failed and were filled forward; last error: %s", failures, last_error)
    return RawTrace(config.features, config.interval, wall_start, rows,
                    device or host_device(), timestamps_us=stamps)


@dataclass(frozen=True)
class OnsetDetectorConfig:
    baseline_window: int = 2000
    trigger_factor: float = 5.0
    persistence: int = 10

    def __post_init__(self):
        if self.trigger_factor <= 1:
            raise DataError("trigger_factor must be > 1")
        if self.persistence < 1:
            raise DataError("persistence must be >= 1")
        if self.baseline_window < 2:
            raise DataError("baseline_window must be >= 2")


ONSET_EPS = 1e-9


def detect_onset(trace: RawTrace | np.ndarray, config: OnsetDetectorConfig = OnsetDetectorConfig()) -> int | None:
    """First sample index where activity departs from the idle baseline.

    The baseline for each feature is the mean absolute first difference over
    the first ``baseline_window`` samples. The onset is the first index i
    where, for any feature, the mean |x[j] - x[j-1]| over the ``persistence``
    differences ending at i exceeds trigger_factor * (baseline + eps).
    """
    x = trace.as_float() if isinstance(trace, RawTrace) else np.asarray(trace, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    b, m = config.baseline_window, config.persistence
    if x.shape[0] < b + m:
        raise DataError(f"trace has {x.shape[0]} samples, need at least {b + m}")
    d = np.abs(np.diff(x, axis=0))                      # d[j-1] = |x[j] - x[j-1]|
    baseline = d[: b - 1].mean(axis=0)
    thresh = config.trigger_factor * (baseline + ONSET_EPS)
    csum = np.concatenate([np.zeros((1, x.shape[1])), np.cumsum(d, axis=0)])
    rolling = (csum[m:] - csum[:-m]) / m                # rolling[k]: diffs ending at k+1 .. k+m
    idx = np.flatnonzero((rolling > thresh).any(axis=1))
    if idx.size == 0:
        return None
    return int(idx[0]) + m


def resolve_endpoint(endpoint: str | None = None) -> str:
    return (os.environ.get(ENDPOINT_ENV) or endpoint or DEFAULT_ENDPOINT).rstrip("/")


_TRANSIENT = {408, 425, 429, 500, 502, 503, 504}


def upload(trace: RawTrace, endpoint: str | None = None, attempts: int = 3,
           backoff: float = 0.2, timeout: float = 30.0, client=None) -> str:
    """POST the trace to ``{endpoint}/v1/traces`` and return the server id.

    Connection errors and 5xx/429 responses are retried with exponential
    backoff, ``attempts`` tries in total. Re-uploading a trace yields a new id.
    """
    import httpx

    url = resolve_endpoint(endpoint) + "/v1/traces"
    body = traceio.dumps(trace)
    own = client is None
    client = client or httpx.Client(timeout=timeout)
    status, text = None, ""
    try:
        for attempt in range(attempts):
            try:
                resp = client.post(url, content=body, headers={"Content-Type": "text/plain; charset=utf-8"})
            except httpx.TransportError as e:
                status, text = None, str(e)
            else:
                if 200 <= resp.status_code < 300:
                    return resp.json()["id"]
                status, text = resp.status_code, resp.text
                if status not in _TRANSIENT:
                    break
            if attempt + 1 < attempts:
                time.sleep(backoff * 2**attempt)
    finally:
        if own:
            client.close()
    raise UploadError(status, text)


@dataclass
class UploadQueue:
    """Bounded hand-off between the sampler and one transmission worker.

    ``put`` never blocks: when the queue is full the oldest unsent trace is
    dropped and counted in ``dropped``.
    """

    send: Callable[[RawTrace], str]
    maxsize: int = 8
    dropped: int = 0
    sent: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    def __post_init__(self):
        self._items: deque = deque()
        self._cv = threading.Condition()
        self._closed = False
        self._busy = False
        self._worker = threading.Thread(target=self._run, name="oscope-upload", daemon=True)
        self._worker.start()

    def put(self, trace: RawTrace) -> None:
        with self._cv:
            if self._closed:
                raise RuntimeError("queue closed")
            if len(self._items) >= self.maxsize:
                self._items.popleft()
                self.dropped += 1
            self._items.append(trace)
            self._cv.notify()

    def _run(self):
        while True:
            with self._cv:
                while not self._items and not self._closed:
                    self._cv.wait()
                if not self._items and self._closed:
                    return
                trace = self._items.popleft()
                self._busy = True
            try:
                self.sent.append(self.send(trace))
            except Exception as e:  # keep the worker alive; report at close
                log.warning("upload failed: %s", e)
                self.errors.append(e)
            finally:
                with self._cv:
                    self._busy = False
                    self._cv.notify_all()

    def join(self, timeout: float | None = None) -> None:
        """Wait until everything queued has been handled."""
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cv:
            while self._items or self._busy:
                left = None if deadline is None else deadline - time.monotonic()
                if left is not None and left <= 0:
                    break
                self._cv.wait(left)

    def close(self, timeout: float | None = None) -> None:
        self.join(timeout)
        with self._cv:
            self._closed = True
            self._cv.notify_all()
        self._worker.join(timeout)

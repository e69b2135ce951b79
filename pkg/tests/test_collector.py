import threading
import sys

import httpx
import numpy as np
import pytest

from oscope import collector, traceio
from oscope.collector import OnsetDetectorConfig, SamplerConfig, UploadError, UploadQueue, detect_onset
from oscope.core import CATALOG, PROCS, DataError, DeviceMeta, RawTrace

linux_only = pytest.mark.skipif(not sys.platform.startswith("linux"), reason="needs Linux syscalls")


def small_trace(n=10):
    return RawTrace(CATALOG[:1], 1000, 0, np.arange(1, n + 1)[:, None], DeviceMeta("d"))


class TestOnset:
    def test_constant_trace_has_no_onset(self):
        assert detect_onset(np.full((6000, 2), 7.0)) is None

    def test_step_after_noise(self):
        rng = np.random.default_rng(0)
        x = 1000 + rng.normal(0, 1, (6000, 1))
        x[3000:] += 100
        assert 2950 <= detect_onset(x) <= 3050

    def test_zero_baseline_then_change(self):
        x = np.zeros(4000)
        x[2500:] = 1
        assert abs(detect_onset(x) - 2500) <= 10

    def test_translation_covariant(self):
        rng = np.random.default_rng(1)
        x = rng.normal(0, 1, (5000, 3)).cumsum(0) * 0.1
        x[3100:, 1] += 40
        assert detect_onset(x) == detect_onset(x + 1e6)

    def test_any_feature_can_trigger(self):
        x = np.zeros((5000, 3))
        x[4000:, 2] = 5
        assert detect_onset(x) == 4000

    def test_too_short(self):
        with pytest.raises(DataError):
            detect_onset(np.zeros(2009))

    def test_config_validation(self):
        with pytest.raises(DataError):
            OnsetDetectorConfig(trigger_factor=1.0)
        with pytest.raises(DataError):
            OnsetDetectorConfig(persistence=0)


class TestSamplerConfig:
    def test_row_counts(self):
        assert SamplerConfig().n_samples == 5000
        assert SamplerConfig(interval=2000).n_samples == 2500

    @pytest.mark.parametrize("kw", [{"duration": 0}, {"interval": 99}, {"features": ()}])
    def test_invalid(self, kw):
        with pytest.raises(DataError):
            SamplerConfig(**kw)


@linux_only
class TestSampling:
    def test_procs_at_least_one(self):
        assert collector.sample_once([PROCS])[0] >= 1

    def test_all_five(self):
        v = collector.sample_once(CATALOG)
        assert v.shape == (5,) and v.dtype == np.uint64

    def test_short_recording(self):
        t = collector.record(SamplerConfig(interval=1000, duration=1.0))
        assert abs(t.length - 1000) <= 1
        assert np.all(np.diff(t.timestamps_us) > 0)

    def test_failures_fill_forward_then_abort(self, monkeypatch):
        calls = {"n": 0}
        real = collector.sample_once

        def flaky(features, path):
            calls["n"] += 1
            if calls["n"] in (5, 6):
                raise collector.SamplingError(PROCS, 5)
            return real(features, path)

        monkeypatch.setattr(collector, "sample_once", flaky)
        t = collector.record(SamplerConfig(interval=1000, duration=1.0))
        assert np.array_equal(t.samples[4], t.samples[3])

        monkeypatch.setattr(collector, "sample_once", lambda f, p: (_ for _ in ()).throw(
            collector.SamplingError(PROCS, 5)))
        with pytest.raises(collector.SamplingError):
            collector.record(SamplerConfig(interval=1000, duration=1.0))


class TestUpload:
    def client(self, handler):
        return httpx.Client(transport=httpx.MockTransport(handler))

    def test_success_posts_trace_format(self):
        seen = {}

        def handler(request):
            seen["body"] = request.content
            seen["url"] = str(request.url)
            return httpx.Response(201, json={"id": "ab" * 16})

        tid = collector.upload(small_trace(), "http://svc:9", client=self.client(handler), backoff=0)
        assert tid == "ab" * 16
        assert seen["url"] == "http://svc:9/v1/traces"
        assert traceio.loads(seen["body"]) == small_trace()

    def test_retries_transient_errors(self):
        codes = iter([503, 502, 201])

        def handler(request):
            c = next(codes)
            return httpx.Response(c, json={"id": "cd" * 16} if c == 201 else {"detail": "busy"})

        assert collector.upload(small_trace(), "http://x", client=self.client(handler), backoff=0) == "cd" * 16

    def test_unreachable_after_three_attempts(self):
        attempts = {"n": 0}

        def handler(request):
            attempts["n"] += 1
            raise httpx.ConnectError("refused", request=request)

        with pytest.raises(UploadError) as err:
            collector.upload(small_trace(), "http://x", client=self.client(handler), backoff=0)
        assert attempts["n"] == 3 and err.value.status is None

    def test_client_errors_are_not_retried(self):
        attempts = {"n": 0}

        def handler(request):
            attempts["n"] += 1
            return httpx.Response(400, text="bad trace")

        with pytest.raises(UploadError) as err:
            collector.upload(small_trace(), "http://x", client=self.client(handler), backoff=0)
        assert attempts["n"] == 1 and err.value.status == 400 and "bad trace" in err.value.body

    def test_endpoint_env_override(self, monkeypatch):
        monkeypatch.setenv("OSCOPE_ENDPOINT", "http://env:1/")
        assert collector.resolve_endpoint("http://arg:2") == "http://env:1"


class TestUploadQueue:
    def test_drops_oldest_when_full(self):
        gate = threading.Event()
        started = threading.Event()
        sent = []

        def send(trace):
            started.set()
            gate.wait(5)
            sent.append(int(trace.samples[0, 0]))
            return "id"

        q = UploadQueue(send, maxsize=2)
        q.put(small_trace(1))          # taken by the worker, blocks on the gate
        assert started.wait(5)
        for start in (2, 3, 4):        # queue holds 2: the one starting at 2 is dropped
            q.put(RawTrace(CATALOG[:1], 1000, 0, [[start]], DeviceMeta("d")))
        put_done = True                # put never blocked although the sender is stuck
        gate.set()
        q.close(5)
        assert put_done and q.dropped == 1
        assert sent == [1, 3, 4]

    def test_errors_are_collected(self):
        def send(trace):
            raise UploadError(500, "boom")

        q = UploadQueue(send)
        q.put(small_trace())
        q.close(5)
        assert len(q.errors) == 1

"""The eleven acceptance criteria at their stated tolerances.

Each test records a PASS/FAIL line (printed in the terminal summary and to
stdout) before asserting. The benchmark dataset and models are shared
module-wide because training dominates the runtime.
"""
import functools
import math
import random
import sys
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from oscope import traceio
from oscope.collector import SamplerConfig, detect_onset, record, sample_once
from oscope.core import CATALOG, DeviceMeta, RawTrace
from oscope.dtwknn import dtw
from oscope.experiments import eval_knn, eval_network, fit_knn, fit_network
from oscope.nn import serialize
from oscope.nn.gradcheck import gradcheck, small_cnn_gru
from oscope.nn.model import build_cnn_gru, classify
from oscope.ranker import avg_distance, euclid
from oscope.service import create_app
from oscope.service.schemas import ServiceConfig
from oscope.signalprep import normalize_array
from oscope.simulator import NoiseModel, default_catalog, synth_dataset, synth_trace

# 200 per class exceeds the 60 min budget on one core; the criterion allows 50
PER_CLASS = 50
BENCH_SEED = 0


def verdict(log, n, ok, detail):
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    log[n] = line
    print(line)
    assert ok, line


# -- shared benchmark -------------------------------------------------------

@pytest.fixture(scope="module")
def bench():
    return synth_dataset(default_catalog(), NoiseModel(), PER_CLASS, BENCH_SEED)


@pytest.fixture(scope="module")
def cnn(bench):
    model, _ = fit_network(bench, device_model="oscope-sim")
    return model, eval_network(model, bench).accuracy


# -- 1 ----------------------------------------------------------------------

def euclid_oracle(x, y):
    return math.sqrt(sum((a - b) ** 2 for a, b in zip(x, y)))


def avg_oracle(rows):
    n = len(rows)
    pairs = [euclid_oracle(rows[i], rows[j]) for i in range(n) for j in range(n) if i != j]
    return sum(pairs) / (n * (n - 1))


def dtw_oracle(x, y):
    @functools.lru_cache(maxsize=None)
    def d(i, j):
        c = abs(x[i] - y[j])
        if i == 0 and j == 0:
            return c
        if i == 0:
            return c + d(0, j - 1)
        if j == 0:
            return c + d(i - 1, 0)
        return c + min(d(i - 1, j - 1), d(i - 1, j), d(i, j - 1))

    return d(len(x) - 1, len(y) - 1)


def test_1_distance_oracles(acceptance_log):
    t0 = time.perf_counter()
    rng = random.Random(2024)
    worst = 0.0
    for _ in range(1000):
        N, T = rng.randint(2, 6), rng.randint(1, 50)
        rows = [[rng.uniform(-100, 100) for _ in range(T)] for _ in range(N)]
        want = euclid_oracle(rows[0], rows[1])
        worst = max(worst, abs(euclid(rows[0], rows[1]) - want) / max(1.0, want))
        want = avg_oracle(rows)
        worst = max(worst, abs(avg_distance(np.array(rows)) - want) / max(1.0, want))
    mismatches = 0
    for _ in range(500):
        x = [rng.uniform(-10, 10) for _ in range(rng.randint(1, 8))]
        y = [rng.uniform(-10, 10) for _ in range(rng.randint(1, 8))]
        mismatches += dtw(np.array(x), np.array(y)) != dtw_oracle(tuple(x), tuple(y))
    secs = time.perf_counter() - t0
    verdict(acceptance_log, 1, worst <= 1e-12 and mismatches == 0 and secs < 60,
            f"euclid/avg worst rel err {worst:.1e}, dtw mismatches {mismatches}/500, {secs:.1f} s")


# -- 2 ----------------------------------------------------------------------

def test_2_gradient_check(acceptance_log):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    model = small_cnn_gru(seed=7)
    err, per = gradcheck(model, rng.normal(size=(6, 40, 2)), rng.integers(0, 3, 6))
    secs = time.perf_counter() - t0
    kinds = {k.split(".")[1] for k in per}
    covered = {"Conv1D", "BatchNorm", "GRU", "Dense"} <= kinds
    verdict(acceptance_log, 2, err < 1e-4 and covered and secs < 300,
            f"max rel err {err:.2e} over {len(per)} tensors ({', '.join(sorted(kinds))}), {secs:.1f} s")


# -- 3 ----------------------------------------------------------------------

def test_3_shape_fidelity(acceptance_log):
    bad = []
    for n in range(1, 6):
        shapes = dict(build_cnn_gru(n, 17).block_shapes())
        got = [shapes[b] for b in ("Reshape", "Conv_1", "Conv_2", "Conv_3", "GRU", "FC", "Output")]
        want = [(500, 10 * n), (249, 64), (123, 128), (60, 256), (60, 128), (7680,), (17,)]
        if got != want:
            bad.append((n, got))
    verdict(acceptance_log, 3, not bad, f"n=1..5 shape tables {'match' if not bad else bad}")


# -- 4 ----------------------------------------------------------------------

def test_4_normalization_invariants(acceptance_log):
    rng = np.random.default_rng(4)
    failures = []
    for i in range(10_000):
        T = int(rng.integers(2, 200))
        x = rng.normal(0, 10 ** rng.uniform(-1, 3), T) + rng.uniform(-1e3, 1e3)
        if rng.random() < 0.05:
            x[:] = x[0]
        col = x[:, None]
        mm = normalize_array(col, "minmax")
        if np.ptp(x) > 0:
            if not (mm.min() == 0.0 and mm.max() == 1.0):
                failures.append((i, "extremes"))
        elif np.any(mm != 0):
            failures.append((i, "constant"))
        if np.any(mm < 0) or np.any(mm > 1):
            failures.append((i, "range"))
        if np.max(np.abs(normalize_array(mm, "minmax") - mm)) > 1e-12:
            failures.append((i, "idempotence"))
        # well-conditioned positive affine map: the shift stays within a few
        # multiples of the scaled range so cancellation stays below 1e-12
        a = 10 ** rng.uniform(-2, 2)
        b = rng.uniform(-5, 5) * a * max(np.ptp(x), 1.0)
        if np.max(np.abs(normalize_array(a * col + b, "minmax") - mm)) > 1e-12:
            failures.append((i, "affine"))
        z = normalize_array(col, "zscore")[:, 0]
        if np.ptp(x) > 0 and x.std() > 1e-9 * np.abs(x).max():
            if abs(z.mean()) > 1e-9 or abs(z.std() - 1) > 1e-9:
                failures.append((i, "zscore"))
    verdict(acceptance_log, 4, not failures,
            f"10000 random columns, {len(failures)} violations {failures[:3]}")


# -- 5, 7 -------------------------------------------------------------------

@pytest.mark.slow
def test_5_synthetic_benchmark(acceptance_log, bench, cnn):
    t0 = time.perf_counter()
    _, acc_cnn = cnn
    knn = fit_knn(bench, band=500)
    report = eval_knn(knn, bench, ks=(1, 3, 5, 7))
    acc_knn = report.accuracy
    ok = acc_cnn >= 0.95 and 0.80 <= acc_knn <= acc_cnn
    verdict(acceptance_log, 5, ok,
            f"{PER_CLASS}/class: CNN-GRU {acc_cnn:.4f}, DTW-KNN {acc_knn:.4f} "
            f"(best K={report.extra['best_k']}; {report.extra['k_accuracy']}), "
            f"DTW eval {time.perf_counter() - t0:.0f} s")


@pytest.mark.slow
def test_7_cadence_ablation(acceptance_log, bench, cnn):
    _, acc1 = cnn
    model5, _ = fit_network(bench, stride=5)
    acc5 = eval_network(model5, bench).accuracy
    verdict(acceptance_log, 7, acc1 - acc5 >= 0.20,
            f"CNN-GRU 1 ms {acc1:.4f} vs 5 ms {acc5:.4f}, drop {100 * (acc1 - acc5):.1f} points")


# -- 6 ----------------------------------------------------------------------

@pytest.mark.slow
def test_6_normalization_ablation(acceptance_log):
    ds = synth_dataset(default_catalog(onset_jitter=300), NoiseModel(baseline_offset=50.0), 10, 1)
    acc = {norm: eval_knn(fit_knn(ds, norm=norm), ds, norm=norm).accuracy for norm in ("minmax", "none")}
    gain = acc["minmax"] - acc["none"]
    verdict(acceptance_log, 6, gain >= 0.10,
            f"DTW-KNN minmax {acc['minmax']:.4f} vs raw {acc['none']:.4f}, gain {100 * gain:.1f} points")


# -- 8 ----------------------------------------------------------------------

@pytest.mark.slow
def test_8_onset_detection(acceptance_log):
    catalog = default_catalog()
    children = np.random.SeedSequence(8).spawn(1000)
    rng = np.random.default_rng(8)
    hits = 0
    for i, child in enumerate(children):
        lead = 2000 + int(rng.integers(0, 1000))
        t = synth_trace(catalog[i % len(catalog)], NoiseModel(), child, length=lead + 5100, lead=lead)
        found = detect_onset(t)
        hits += found is not None and abs(found - t.onsets[0]) <= 50
    verdict(acceptance_log, 8, hits >= 950, f"{hits}/1000 onsets within 50 samples")


# -- 9 ----------------------------------------------------------------------

@pytest.mark.slow
def test_9_inference_latency(acceptance_log, cnn):
    model, _ = cnn
    window = normalize_array(np.random.default_rng(9).normal(size=(5000, 5)), "minmax")
    for _ in range(3):
        classify(model, window)
    times = [classify(model, window).latency for _ in range(20)]
    mean_ms = float(np.mean(times)) / 1000  # latency is recorded in microseconds
    verdict(acceptance_log, 9, mean_ms < 100, f"mean classify latency {mean_ms:.1f} ms on 5000x5")


# -- 10 ---------------------------------------------------------------------

@pytest.mark.slow
def test_10_service_contract(acceptance_log, cnn, tmp_path):
    model, _ = cnn
    path = tmp_path / "bench-cnn.osc"
    serialize.save_model(path, model)
    store = tmp_path / "store"

    def client():
        return TestClient(create_app(ServiceConfig(store=str(store), models=[str(path)])))

    checks = {}
    cls = 6
    trace = synth_trace(default_catalog()[cls], NoiseModel(), 1010, length=7600, lead=2500)
    body = traceio.dumps(trace)
    tid = client().post("/v1/traces", content=body).json()["id"]
    restarted = client()
    checks["round trip"] = restarted.get(f"/v1/traces/{tid}/raw").content == body
    res = restarted.post("/v1/classify", json={"trace_id": tid})
    checks["correct class"] = res.status_code == 200 and res.json()["label_id"] == cls
    checks["400"] = restarted.post("/v1/traces", content=b"not a trace").status_code == 400
    checks["404"] = restarted.get("/v1/traces/" + "0" * 32).status_code == 404
    flat = RawTrace(CATALOG, 1000, 0, np.full((6000, 5), 9, dtype=np.uint64), DeviceMeta("oscope-sim"))
    fid = restarted.post("/v1/traces", content=traceio.dumps(flat)).json()["id"]
    checks["422"] = restarted.post("/v1/classify", json={"trace_id": fid}).status_code == 422
    verdict(acceptance_log, 10, all(checks.values()),
            ", ".join(f"{k} {'ok' if v else 'FAILED'}" for k, v in checks.items()))


# -- 11 ---------------------------------------------------------------------

@pytest.mark.hostdep
@pytest.mark.skipif(not sys.platform.startswith("linux"), reason="needs Linux syscalls")
def test_11_collector(acceptance_log):
    t = record(SamplerConfig(interval=1000, duration=5.0))
    mean_us = float(np.mean(np.diff(t.timestamps_us)))
    values = sample_once(CATALOG)
    ok = abs(t.length - 5000) <= 1 and abs(mean_us - 1000) <= 50 and values.shape == (len(CATALOG),)
    verdict(acceptance_log, 11, ok,
            f"{t.length} samples, mean interval {mean_us:.1f} us, features {len(values)}/{len(CATALOG)}")

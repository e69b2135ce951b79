import numpy as np
import pytest
from scipy import stats

from oscope.core import CATALOG, BehaviorLabel, DataError
from oscope.simulator import (
    DEFAULT_SCALES,
    QUIET,
    BehaviorSignature,
    NoiseModel,
    Segment,
    catalog_groups,
    default_catalog,
    load_catalog,
    multi_behavior_catalog,
    render_segments,
    save_catalog,
    synth_dataset,
    synth_multi_behavior,
    synth_multi_dataset,
    synth_trace,
    with_jitter,
)


def simple_sig(label_id=0, jitter=0, amp_jitter=0.0):
    tmpl = (Segment("step", 100, 30.0), Segment("ramp", 200, -10.0), Segment("spike", 50, 5.0),
            Segment("decay", 200, 8.0), Segment("hold", 50, 0.0))
    templates = {f: tmpl for f in CATALOG}
    return BehaviorSignature(BehaviorLabel(label_id, f"s{label_id}"), templates, jitter, amp_jitter)


def test_render_segment_shapes():
    step = render_segments([Segment("step", 4, 3.0)])
    assert step.tolist() == [3, 3, 3, 3]
    ramp = render_segments([Segment("ramp", 4, 4.0)])
    assert ramp.tolist() == [1, 2, 3, 4]
    # a spike is a transient excursion: the level returns afterwards
    spike = render_segments([Segment("spike", 3, 5.0), Segment("hold", 1, 0.0)])
    assert spike.tolist() == [5, 5, 5, 0]
    decay = render_segments([Segment("decay", 50, 2.0)])
    assert decay[-1] == pytest.approx(2.0) and decay[0] < 2.0
    # levels carry over between segments
    seq = render_segments([Segment("step", 2, 1.0), Segment("hold", 2, 0.0)])
    assert seq.tolist() == [1, 1, 1, 1]


def test_noise_free_trace_equals_template():
    sig = simple_sig()
    trace = synth_trace(sig, QUIET, seed=3)
    tmpl = render_segments(sig.templates[CATALOG[0]])
    level = np.concatenate([tmpl, np.full(5000 - tmpl.size, tmpl[-1])])
    for f, feat in enumerate(CATALOG):
        sc = DEFAULT_SCALES[feat]
        want = np.rint(sc.baseline + sc.unit * level).astype(np.uint64)
        assert np.array_equal(trace.samples[:, f], want)
    assert trace.onsets == (0,)
    assert trace.label == sig.label


def test_same_seed_same_trace():
    sig = default_catalog()[5]
    a, b = synth_trace(sig, NoiseModel(), 42), synth_trace(sig, NoiseModel(), 42)
    assert a == b
    assert a != synth_trace(sig, NoiseModel(), 43)


def test_onset_jitter_is_uniform():
    sig = simple_sig(jitter=200)
    offsets = [synth_trace(sig, QUIET, s).onsets[0] for s in range(1000)]
    assert min(offsets) >= 0 and max(offsets) <= 200
    # discrete uniform on 0..200, compared through its continuous embedding
    u = (np.array(offsets) + np.random.default_rng(0).uniform(0, 1, 1000)) / 201
    assert stats.kstest(u, "uniform").pvalue > 0.01


def test_counters_are_clamped_non_negative():
    sig = BehaviorSignature(BehaviorLabel(0, "x"), {CATALOG[0]: (Segment("step", 10, -1e6),)}, 0, 0.0)
    t = synth_trace(sig, QUIET, 0)
    assert t.samples.min() == 0


def test_dataset_counts():
    ds = synth_dataset(default_catalog()[:2], NoiseModel(), 2, seed=1)
    assert len(ds.windows) == 4
    with pytest.raises(DataError):
        synth_dataset(default_catalog()[:2], NoiseModel(), 1, seed=1)
    with pytest.raises(DataError):
        synth_dataset(default_catalog()[:1], NoiseModel(), 5, seed=1)


@pytest.mark.slow
def test_full_size_dataset_counts():
    ds = synth_dataset(default_catalog(), NoiseModel(), 200, seed=1)
    assert (len(ds.windows), len(ds.train_indices), len(ds.test_indices)) == (3400, 2380, 1020)


def test_identical_signatures_still_make_a_valid_dataset():
    a = simple_sig(0)
    b = BehaviorSignature(BehaviorLabel(1, "twin"), a.templates, 0, 0.0)
    ds = synth_dataset([a, b], QUIET, 3, seed=0)
    x, _ = ds.arrays(range(6))
    assert np.array_equal(x[0], x[3])  # indistinguishable by construction


def test_single_behavior_composition_equals_synth_trace():
    sig = default_catalog()[2]
    assert synth_multi_behavior([sig], (10, 20), NoiseModel(), 9) == synth_trace(sig, NoiseModel(), 9)


def test_zero_gap_composition_concatenates_templates():
    sigs = [simple_sig(i) for i in range(3)]
    t = synth_multi_behavior(sigs, (0, 0), QUIET, 0)
    d = sigs[0].duration
    assert t.onsets == (0, d, 2 * d)
    tmpl = render_segments(sigs[0].templates[CATALOG[0]])
    sc = DEFAULT_SCALES[CATALOG[0]]
    level = np.concatenate([tmpl, tmpl + tmpl[-1], tmpl + 2 * tmpl[-1]])
    want = np.rint(sc.baseline + sc.unit * level)
    assert np.array_equal(t.as_float()[: 3 * d, 0], want)


def test_composition_overflow():
    with pytest.raises(DataError):
        synth_multi_behavior([simple_sig()] * 3, (0, 0), QUIET, 0, length=1000)


def test_41_composite_classes():
    classes = multi_behavior_catalog(default_catalog())
    assert len(classes) == 41
    assert [len(seq) for _, seq in classes].count(2) == 12
    assert [len(seq) for _, seq in classes].count(3) == 12
    ds = synth_multi_dataset(default_catalog(), NoiseModel(), 2, seed=0)
    assert ds.n_classes == 41


def test_default_catalog_separable_without_noise():
    sigs = with_jitter(default_catalog(), onset_jitter=0, amplitude_jitter=0.0)
    x = np.stack([synth_trace(s, QUIET, 0).as_float() for s in sigs])
    x = x.reshape(len(sigs), -1)
    d = np.sqrt(((x[:, None] - x[None]) ** 2).sum(-1))
    off = d[~np.eye(len(sigs), dtype=bool)]
    assert off.min() > 0  # within-class distance is zero without noise


def test_catalog_groups_cover_all_behaviors():
    groups = catalog_groups()
    assert sorted(i for ids in groups.values() for i in ids) == list(range(17))
    assert sorted(len(g) for g in groups.values()) == [2, 2, 2, 2, 3, 3, 3]


def test_catalog_file_round_trip(tmp_path):
    path = tmp_path / "catalog.json"
    noise = NoiseModel(sigma=0.5)
    save_catalog(path, default_catalog(), noise)
    sigs, back_noise = load_catalog(path)
    assert back_noise == noise
    assert [s.label for s in sigs] == [s.label for s in default_catalog()]
    assert synth_trace(sigs[4], noise, 1) == synth_trace(default_catalog()[4], noise, 1)


def test_bad_noise_parameters():
    with pytest.raises(DataError):
        NoiseModel(ar1_rho=1.0)
    with pytest.raises(DataError):
        NoiseModel(sigma=-1)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oscope.core import (
    CATALOG,
    BehaviorLabel,
    ClassificationResult,
    DataError,
    DeviceMeta,
    FeatureId,
    RankingReport,
    RawTrace,
    Window,
    argmax_label,
    lookup_feature,
    make_dataset,
    register_feature,
    validate_labels,
)

DEV = DeviceMeta("test-device")


def windows_for(counts, T=4, n=1):
    out = []
    for cls, count in enumerate(counts):
        lab = BehaviorLabel(cls, f"b{cls}")
        for i in range(count):
            out.append(Window(CATALOG[:n], np.full((T, n), float(i)), lab, length=None))
    return out


class TestFeatureId:
    def test_catalog_has_the_five_features(self):
        assert {str(f) for f in CATALOG} == {
            "sysinfo.procs", "statvfs.f_bavail", "sysconf._SC_AVPHYS_PAGES", "statvfs.f_ffree", "sysinfo.freeram",
        }

    def test_parse_round_trip(self):
        for f in CATALOG:
            assert FeatureId.parse(str(f)) is f

    def test_unknown_feature_rejected(self):
        with pytest.raises(DataError):
            FeatureId.parse("sysinfo.nonexistent_field")
        with pytest.raises(DataError):
            FeatureId.parse("no_dot")

    def test_registry_extends_without_losing_catalog(self):
        f = register_feature("statvfs", "f_files")
        assert lookup_feature("statvfs", "f_files") == f
        for c in CATALOG:
            assert lookup_feature(c.syscall, c.field) is c


class TestRawTrace:
    def test_samples_coerced_to_readonly_uint64(self):
        t = RawTrace(CATALOG[:2], 1000, 0, [[1, 2], [3, 4]], DEV)
        assert t.samples.dtype == np.uint64
        assert t.length == 2
        with pytest.raises(ValueError):
            t.samples[0, 0] = 9

    @pytest.mark.parametrize("samples", [np.zeros((0, 1)), np.zeros((3, 2)), np.zeros(3)])
    def test_shape_invariants(self, samples):
        with pytest.raises(DataError):
            RawTrace(CATALOG[:1], 1000, 0, samples, DEV)

    def test_interval_must_be_positive(self):
        with pytest.raises(DataError):
            RawTrace(CATALOG[:1], 0, 0, [[1]], DEV)

    def test_negative_counters_rejected(self):
        with pytest.raises(DataError):
            RawTrace(CATALOG[:1], 1000, 0, [[-1]], DEV)

    def test_device_model_required(self):
        with pytest.raises(DataError):
            DeviceMeta("")


class TestWindow:
    def test_default_length_is_5000(self):
        with pytest.raises(DataError):
            Window(CATALOG[:1], np.zeros((4999, 1)))
        assert Window(CATALOG[:1], np.zeros((5000, 1))).T == 5000

    def test_override_for_ablations(self):
        w = Window(CATALOG[:2], np.zeros((1000, 2)), length=None)
        assert (w.T, w.n) == (1000, 2)


class TestMakeDataset:
    def test_200_single_class_gives_140_60(self):
        ds = make_dataset(windows_for([200]), seed=1)
        assert (len(ds.train_indices), len(ds.test_indices)) == (140, 60)

    def test_same_seed_same_split(self):
        w = windows_for([10])
        a, b = make_dataset(w, 7), make_dataset(w, 7)
        assert a.train_indices == b.train_indices and a.test_indices == b.test_indices

    def test_three_classes_split_7_3_each(self):
        ds = make_dataset(windows_for([10, 10, 10]), seed=3)
        train_labels = [ds.windows[i].label.id for i in ds.train_indices]
        assert [train_labels.count(c) for c in range(3)] == [7, 7, 7]

    def test_unlabeled_rejected(self):
        w = windows_for([3]) + [Window(CATALOG[:1], np.zeros((4, 1)), None, length=None)]
        with pytest.raises(DataError):
            make_dataset(w, 0)

    def test_inconsistent_features_rejected(self):
        w = windows_for([3]) + [Window(CATALOG[1:2], np.zeros((4, 1)), BehaviorLabel(0, "b0"), length=None)]
        with pytest.raises(DataError):
            make_dataset(w, 0)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(1, 25), min_size=1, max_size=5), st.integers(0, 2**64 - 1))
    def test_disjoint_cover_and_per_class_counts(self, counts, seed):
        ds = make_dataset(windows_for(counts), seed)
        train, test = set(ds.train_indices), set(ds.test_indices)
        assert not train & test
        assert train | test == set(range(sum(counts)))
        for cls, size in enumerate(counts):
            got = sum(1 for i in train if ds.windows[i].label.id == cls)
            assert got == (7 * size) // 10


class TestLabels:
    def test_sparse_ids_rejected(self):
        with pytest.raises(DataError):
            validate_labels([BehaviorLabel(0, "a"), BehaviorLabel(2, "b")])

    def test_duplicate_names_rejected(self):
        with pytest.raises(DataError):
            validate_labels([BehaviorLabel(0, "a"), BehaviorLabel(1, "a")])


class TestResults:
    def test_ranking_report_must_be_ascending(self):
        RankingReport(((CATALOG[0], 1.0), (CATALOG[1], 2.0)))
        with pytest.raises(DataError):
            RankingReport(((CATALOG[0], 2.0), (CATALOG[1], 1.0)))
        with pytest.raises(DataError):
            RankingReport(((CATALOG[0], -1.0),))

    def test_probabilities_must_sum_to_one(self):
        labs = (BehaviorLabel(0, "a"), BehaviorLabel(1, "b"))
        with pytest.raises(DataError):
            ClassificationResult(labs[0], np.array([0.5, 0.6]), 1.0)

    def test_argmax_ties_go_to_lowest_id(self):
        labs = tuple(BehaviorLabel(i, str(i)) for i in range(3))
        assert argmax_label(np.array([0.2, 0.4, 0.4]), labs).id == 1

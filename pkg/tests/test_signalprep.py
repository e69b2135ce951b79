import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from oscope.core import CATALOG, DataError, DeviceMeta, RawTrace, Window
from oscope.signalprep import (
    downsample,
    extract_window,
    fuse_features,
    mean_normalize,
    mean_subtract,
    minmax_normalize,
    normalize,
    normalize_array,
    zscore_standardize,
)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)
columns = hnp.arrays(np.float64, st.integers(2, 60), elements=finite)


def win(col):
    return Window(CATALOG[:1], np.asarray(col, dtype=np.float64)[:, None], length=None)


class TestExamples:
    def test_minmax(self):
        assert minmax_normalize(win([1, 3, 5])).values[:, 0].tolist() == [0, 0.5, 1]

    def test_constant_column_is_zeros(self):
        for fn in (minmax_normalize, mean_normalize, zscore_standardize):
            assert fn(win([7, 7, 7])).values[:, 0].tolist() == [0, 0, 0]

    def test_mean_subtract(self):
        assert mean_subtract(win([1, 2, 3])).values[:, 0].tolist() == [-1, 0, 1]

    def test_mean_normalize(self):
        assert mean_normalize(win([0, 10])).values[:, 0].tolist() == [-0.5, 0.5]

    def test_needs_two_points(self):
        with pytest.raises(DataError):
            normalize(win([1.0]))

    def test_stats_recorded(self):
        nw = minmax_normalize(win([2, 4, 9]))
        assert nw.method == "minmax"
        assert nw.min.tolist() == [2] and nw.max.tolist() == [9]

    def test_batch_normalizes_each_window_separately(self):
        x = np.stack([np.arange(6.0).reshape(3, 2), 10 * np.arange(6.0).reshape(3, 2)])
        out = normalize_array(x, "minmax")
        assert np.allclose(out[0], out[1])


class TestProperties:
    @settings(max_examples=300, deadline=None)
    @given(columns)
    def test_minmax_range_and_extremes(self, col):
        out = minmax_normalize(win(col)).values[:, 0]
        assert out.min() >= 0 and out.max() <= 1
        if np.ptp(col) > 0:
            assert out.min() == 0 and out.max() == 1

    @settings(max_examples=300, deadline=None)
    @given(columns)
    def test_minmax_idempotent(self, col):
        once = minmax_normalize(win(col)).values
        twice = minmax_normalize(Window(CATALOG[:1], once, length=None)).values
        assert np.allclose(once, twice, atol=1e-12, rtol=0)

    @settings(max_examples=300, deadline=None)
    @given(hnp.arrays(np.float64, st.integers(2, 60), elements=st.floats(-1e3, 1e3)),
           st.floats(1e-3, 1e3), st.floats(-1e3, 1e3))
    def test_minmax_positive_affine_invariant(self, col, a, b):
        # well-conditioned only: the shifted range must not vanish next to the offset
        assume(a * np.ptp(col) >= 1e-2 * (a * np.abs(col).max() + abs(b)))
        base = minmax_normalize(win(col)).values
        moved = minmax_normalize(win(a * col + b)).values
        assert np.allclose(base, moved, atol=1e-12, rtol=0)

    @settings(max_examples=300, deadline=None)
    @given(columns)
    def test_zscore_moments(self, col):
        if np.std(col) < 1e-6 * max(1.0, np.abs(col).max()):
            return
        out = zscore_standardize(win(col)).values[:, 0]
        assert abs(out.mean()) < 1e-12 * len(col) ** 0.5 * 10
        assert abs(out.std() - 1) < 1e-12 * 10


class TestWindowing:
    def trace(self, T):
        vals = np.arange(T * 2, dtype=np.uint64).reshape(T, 2)
        return RawTrace(CATALOG[:2], 1000, 0, vals, DeviceMeta("d"))

    def test_extract_head(self):
        w = extract_window(self.trace(10000), 0)
        assert w.T == 5000 and w.values[0, 0] == 0 and w.values[-1, 0] == 2 * 4999

    def test_extract_pads_with_last_sample(self):
        t = self.trace(5200)
        w = extract_window(t, 400)
        assert w.T == 5000
        assert np.all(w.values[4800:] == t.as_float()[-1])
        assert np.array_equal(w.values[:4800], t.as_float()[400:])

    def test_onset_beyond_end(self):
        with pytest.raises(DataError):
            extract_window(self.trace(100), 100)

    def test_fuse(self):
        parts = [Window((f,), np.full((5000, 1), i)) for i, f in enumerate(CATALOG)]
        fused = fuse_features(parts)
        assert fused.values.shape == (5000, 5) and fused.features == CATALOG
        assert fuse_features(parts[:1]).values.shape == (5000, 1)

    def test_fuse_length_mismatch(self):
        with pytest.raises(DataError):
            fuse_features([Window(CATALOG[:1], np.zeros((5000, 1))),
                           Window(CATALOG[1:2], np.zeros((4999, 1)), length=None)])

    def test_downsample(self):
        x = np.arange(20.0).reshape(10, 2)
        assert downsample(x, 5).tolist() == [[0, 1], [10, 11]]

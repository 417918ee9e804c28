import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lbo_detect.errors import (
    ConfigInvalid,
    ConstantSeries,
    EmptyInput,
    LabelMissing,
    LengthMismatch,
    SeriesTooShort,
)
from lbo_detect.series import (
    Label,
    Protocol,
    QuasiStaticRecord,
    ScalingParams,
    TimeSeries,
    apply_scale,
    chrono_split,
    expected_label,
    make_windows,
    minmax_scale,
    random_split,
    rmse,
)


def _protocol(ratios, transition, labelled=True):
    records = []
    for i, r in enumerate(ratios):
        label = expected_label(r, transition) if labelled else None
        records.append(QuasiStaticRecord(r, TimeSeries(np.arange(10.0) + i), label))
    return Protocol("p", 80.0, tuple(records), transition)


class TestMinmax:
    @pytest.mark.parametrize(
        "x, want",
        [([0.0, 5.0, 10.0], [0.0, 0.5, 1.0]), ([-1.0, 0.0, 3.0], [0.0, 0.25, 1.0])],
    )
    def test_examples(self, x, want):
        scaled, params = minmax_scale(x)
        np.testing.assert_allclose(scaled, want, atol=1e-15)
        assert (params.min_val, params.max_val) == (min(x), max(x))

    def test_apply_outside_range(self):
        params = ScalingParams(0.0, 10.0)
        np.testing.assert_allclose(apply_scale([20.0], params), [2.0])

    def test_constant_raises(self):
        with pytest.raises(ConstantSeries):
            minmax_scale([3.0, 3.0, 3.0])

    def test_empty_raises(self):
        with pytest.raises(EmptyInput):
            minmax_scale([])

    def test_accepts_time_series(self):
        scaled, _ = minmax_scale(TimeSeries([2.0, 4.0]))
        np.testing.assert_array_equal(scaled, [0.0, 1.0])

    @given(arrays(np.float64, st.integers(2, 50), elements=st.floats(-1e6, 1e6)))
    def test_range_and_extremes(self, x):
        if np.ptp(x) == 0:
            return
        scaled, _ = minmax_scale(x)
        assert scaled.min() == 0.0
        assert math.isclose(scaled.max(), 1.0, abs_tol=1e-12)
        assert np.all((scaled >= 0.0) & (scaled <= 1.0 + 1e-12))

    @given(arrays(np.float64, st.integers(2, 50), elements=st.floats(-1e3, 1e3)))
    def test_monotone(self, x):
        if np.ptp(x) == 0:
            return
        scaled, _ = minmax_scale(x)
        order = np.argsort(x, kind="stable")
        assert np.all(np.diff(scaled[order]) >= 0)


class TestWindows:
    def test_small_example(self):
        w = make_windows([1.0, 2.0, 3.0, 4.0, 5.0], t_x=3)
        assert len(w) == 2
        np.testing.assert_array_equal(w.inputs, [[1, 2, 3], [2, 3, 4]])
        np.testing.assert_array_equal(w.targets, [4, 5])

    def test_too_short(self):
        with pytest.raises(SeriesTooShort):
            make_windows(np.zeros(4), t_x=4)

    def test_default_length(self):
        assert len(make_windows(np.arange(1000.0))) == 968

    def test_bad_tx(self):
        with pytest.raises(ConfigInvalid):
            make_windows(np.arange(10.0), t_x=0)

    @given(st.integers(1, 20), st.integers(0, 40))
    def test_count_and_shift(self, t_x, extra):
        x = np.arange(t_x + 1 + extra, dtype=np.float64)
        w = make_windows(x, t_x)
        assert len(w) == x.size - t_x
        np.testing.assert_array_equal(w.inputs[:, 1:], w.inputs[:, :-1] + 1)
        np.testing.assert_array_equal(w.targets, w.inputs[:, -1] + 1)


class TestSplits:
    @pytest.mark.parametrize("n, frac, want", [(100, 0.9, (90, 10)), (7, 0.9, (6, 1))])
    def test_chrono(self, n, frac, want):
        s = TimeSeries(np.arange(float(n)))
        a, b = chrono_split(s, frac)
        assert (len(a), len(b)) == want
        np.testing.assert_array_equal(np.concatenate([a.samples, b.samples]), s.samples)

    def test_chrono_empty_side(self):
        with pytest.raises(EmptyInput):
            chrono_split(TimeSeries([1.0, 2.0]), 0.4)

    @pytest.mark.parametrize("frac", [0.0, 1.0, -0.1])
    def test_chrono_bad_frac(self, frac):
        with pytest.raises(ConfigInvalid):
            chrono_split(TimeSeries(np.arange(10.0)), frac)

    def test_random_sizes(self):
        w = make_windows(np.arange(11.0), t_x=1)
        tr, va = random_split(w, 0.2, seed=0)
        assert (len(tr), len(va)) == (8, 2)

    def test_random_partition_and_determinism(self):
        w = make_windows(np.arange(200.0), t_x=4)
        tr, va = random_split(w, 0.2, seed=7)
        tr2, va2 = random_split(w, 0.2, seed=7)
        np.testing.assert_array_equal(tr.targets, tr2.targets)
        np.testing.assert_array_equal(va.targets, va2.targets)
        both = np.sort(np.concatenate([tr.targets, va.targets]))
        np.testing.assert_array_equal(both, w.targets)
        _, va3 = random_split(w, 0.2, seed=8)
        assert not np.array_equal(va.targets, va3.targets)


class TestRmse:
    def test_example(self):
        assert rmse([0.0, 0.0], [3.0, 4.0]) == pytest.approx(math.sqrt(12.5))

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            rmse([1.0], [1.0, 2.0])

    def test_empty(self):
        with pytest.raises(EmptyInput):
            rmse([], [])

    @given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-1e3, 1e3)))
    def test_zero_on_self(self, x):
        assert rmse(x, x) == 0.0


class TestRecords:
    def test_label_parse(self):
        assert Label.parse(" Unhealthy ") is Label.UNHEALTHY
        with pytest.raises(LabelMissing):
            Label.parse("sick")

    @pytest.mark.parametrize("phi, want", [(1.0, Label.UNHEALTHY), (1.38, Label.HEALTHY), (1.5, Label.HEALTHY)])
    def test_expected_label(self, phi, want):
        assert expected_label(phi, 1.38) is want

    def test_series_validation(self):
        with pytest.raises(EmptyInput):
            TimeSeries([])
        with pytest.raises(ValueError):
            TimeSeries([1.0, math.nan])
        with pytest.raises(ValueError):
            TimeSeries([1.0], sample_rate_hz=0.0)

    def test_series_is_immutable(self):
        s = TimeSeries([1.0, 2.0])
        with pytest.raises(ValueError):
            s.samples[0] = 5.0

    def test_ratio_below_one(self):
        with pytest.raises(ValueError):
            QuasiStaticRecord(0.9, TimeSeries([1.0]))

    def test_protocol_ok(self):
        p = _protocol([1.0, 1.2, 1.4], 1.2)
        assert p.phi_ratios == [1.0, 1.2, 1.4]
        assert p.record_at(1.2).label is Label.HEALTHY
        assert p.blowout_record.phi_ratio == 1.0
        with pytest.raises(KeyError):
            p.record_at(1.3)

    @pytest.mark.parametrize(
        "ratios, transition",
        [([1.1, 1.2], 1.2), ([1.0, 1.4, 1.2], 1.2), ([1.0, 1.2], 1.3)],
    )
    def test_protocol_invalid(self, ratios, transition):
        with pytest.raises(ValueError):
            _protocol(ratios, transition, labelled=False)

    def test_protocol_wrong_label(self):
        recs = (
            QuasiStaticRecord(1.0, TimeSeries([1.0, 2.0]), Label.HEALTHY),
            QuasiStaticRecord(1.2, TimeSeries([1.0, 2.0]), Label.HEALTHY),
        )
        with pytest.raises(ValueError):
            Protocol("p", 80.0, recs, 1.2)

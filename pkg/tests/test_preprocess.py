import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from brainage.errors import AllZeroVolume, DataError, DegenerateVolume, EmptyInput, KTooLarge, TargetTooLarge
from brainage.nifti import Volume
from brainage.preprocess import (
    QuantileTable,
    Slice,
    build_reference_histogram,
    center_crop,
    empirical_cdf,
    extract_center_slices,
    histogram_match,
    minmax_normalize,
)


def vol(values, shape=None):
    arr = np.asarray(values, dtype=np.float32)
    if shape is None:
        arr = arr.reshape(-1, 1, 1)
    else:
        arr = arr.reshape(shape)
    return Volume(arr)


def brute_force_match(fg, levels, values):
    """Exact rational CDF mapping for a tiny foreground."""
    fg = [Fraction(float(v)) for v in fg]
    n = len(fg)
    levels = [Fraction(float(x)) for x in levels]
    values = [Fraction(float(x)) for x in values]
    out = []
    for v in fg:
        first = sum(1 for w in fg if w < v)
        last = sum(1 for w in fg if w <= v) - 1
        p = Fraction(first + last, 2 * (n - 1))
        for j in range(len(levels) - 1):
            if levels[j] <= p <= levels[j + 1]:
                t = (p - levels[j]) / (levels[j + 1] - levels[j])
                out.append(values[j] + t * (values[j + 1] - values[j]))
                break
    return np.array([float(x) for x in out], dtype=np.float32)


class TestReferenceHistogram:
    def test_constant_volume(self):
        table = build_reference_histogram([vol(np.full(20, 7.0))], q=5)
        np.testing.assert_array_equal(table.values, 7.0)
        np.testing.assert_array_equal(table.levels, [0, 0.25, 0.5, 0.75, 1])

    def test_two_volumes_average_quantiles(self):
        # zero is background, so the two foregrounds are {1..10} and {11..20}
        a = vol(np.arange(1, 11))
        b = vol(np.arange(11, 21))
        table = build_reference_histogram([a, b], q=11)
        oracle = [(np.quantile(np.arange(1, 11), p) + np.quantile(np.arange(11, 21), p)) / 2 for p in table.levels]
        np.testing.assert_allclose(table.values, oracle, rtol=0, atol=1e-12)
        assert table.values[5] == pytest.approx(10.5)  # medians 5.5 and 15.5

    def test_background_excluded(self):
        a = vol([0, 0, 0, 0, 1, 2, 3])
        table = build_reference_histogram([a], q=3)
        np.testing.assert_allclose(table.values, [1, 2, 3])

    def test_many_volumes_monotone(self):
        rng = np.random.default_rng(0)
        vols = [Volume(rng.gamma(2.0, 30.0 * rng.uniform(0.5, 2), size=(8, 8, 8))) for _ in range(50)]
        table = build_reference_histogram(vols, q=1000)
        assert len(table) == 1000
        assert np.all(np.diff(table.values) >= 0)
        assert np.all(np.diff(table.levels) > 0)

    def test_errors(self):
        with pytest.raises(EmptyInput):
            build_reference_histogram([], q=5)
        with pytest.raises(AllZeroVolume):
            build_reference_histogram([vol([1, 2]), vol([0, 0])], q=5)

    def test_csv_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        table = build_reference_histogram([Volume(rng.uniform(1, 9, (4, 4, 4)))], q=17)
        table.to_csv(tmp_path / "ref.csv")
        assert (tmp_path / "ref.csv").read_text().splitlines()[0] == "level,value"
        back = QuantileTable.from_csv(tmp_path / "ref.csv")
        np.testing.assert_array_equal(back.levels, table.levels)
        np.testing.assert_array_equal(back.values, table.values)

    def test_table_invariants_enforced(self):
        with pytest.raises(DataError):
            QuantileTable([0, 0.5, 1], [3, 2, 1])
        with pytest.raises(DataError):
            QuantileTable([0.1, 1], [1, 2])


class TestEmpiricalCdf:
    def test_distinct(self):
        np.testing.assert_array_equal(empirical_cdf(np.array([3.0, 1.0, 2.0, 4.0])), [2 / 3, 0, 1 / 3, 1])

    def test_ties_take_midpoint(self):
        np.testing.assert_allclose(empirical_cdf(np.array([1.0, 1.0, 2.0])), [0.25, 0.25, 1.0])


class TestHistogramMatch:
    def test_four_element_example(self):
        ref = QuantileTable(np.linspace(0, 1, 4), [10, 20, 30, 40])
        out = histogram_match(vol([1, 2, 3, 4]), ref)
        np.testing.assert_array_equal(out.data.ravel(), [10, 20, 30, 40])

    def test_exhaustive_small_foregrounds(self):
        tables = [
            QuantileTable(np.linspace(0, 1, 2), [5, 9]),
            QuantileTable(np.linspace(0, 1, 3), [1, 2, 8]),
            QuantileTable(np.linspace(0, 1, 4), [10, 20, 30, 40]),
            QuantileTable(np.linspace(0, 1, 5), [0.5, 3, 3, 7.25, 100]),
            QuantileTable([0, 0.1, 0.7, 1], [2, 2.5, 11, 13]),
        ]
        checked = 0
        for n in (2, 3, 4):
            for fg in itertools.product([1.0, 2.0, 3.5, 4.0], repeat=n):
                if len(set(fg)) < 2:
                    continue
                for table in tables:
                    got = histogram_match(vol(fg), table).data.ravel()
                    expected = brute_force_match(fg, table.levels, table.values)
                    np.testing.assert_array_equal(got, expected, err_msg=f"{fg} {table}")
                    checked += 1
        assert checked > 1000

    def test_background_stays_zero(self):
        ref = QuantileTable(np.linspace(0, 1, 3), [10, 20, 30])
        out = histogram_match(vol([0, 5, 0, 6, 7]), ref).data.ravel()
        np.testing.assert_array_equal(out, [0, 10, 0, 20, 30])

    def test_constant_foreground_rejected(self):
        with pytest.raises(DegenerateVolume):
            histogram_match(vol([0, 3, 3, 3]), QuantileTable([0, 1], [1, 2]))

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.int16, st.integers(8, 300), elements=st.integers(1, 40)))
    def test_self_match_within_one_step(self, values):
        fg = values.astype(np.float32)
        distinct = np.unique(fg)
        if distinct.size < 2:
            return
        table = build_reference_histogram([vol(fg)], q=distinct.size)
        out = histogram_match(vol(fg), table).data.ravel()
        # one step = the width of the table segment the voxel's level falls in
        seg = np.clip(np.searchsorted(table.levels, empirical_cdf(fg), side="right") - 1, 0, len(table) - 2)
        step = table.values[seg + 1] - table.values[seg]
        assert np.all(np.abs(out - fg) <= step + 1e-4)

    def test_self_match_distinct_is_identity(self):
        fg = np.random.default_rng(5).permutation(np.arange(1, 200)).astype(np.float32)
        table = build_reference_histogram([vol(fg)], q=fg.size)
        np.testing.assert_allclose(histogram_match(vol(fg), table).data.ravel(), fg, atol=1e-4)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_monotone(self, seed):
        rng = np.random.default_rng(seed)
        data = rng.integers(0, 30, size=200).astype(np.float32)
        if np.unique(data[data != 0]).size < 2:
            return
        ref = build_reference_histogram([Volume(rng.gamma(2, 10, (6, 6, 6)) + 1)], q=50)
        out = histogram_match(vol(data), ref).data.ravel()
        order = np.argsort(data, kind="stable")
        fg_order = order[data[order] != 0]
        assert np.all(np.diff(out[fg_order]) >= 0)

    def test_output_quantiles_match_reference(self):
        rng = np.random.default_rng(11)
        ref_vols = [Volume(rng.gamma(3, 20 * s, (10, 10, 10))) for s in (0.8, 1.0, 1.3)]
        table = build_reference_histogram(ref_vols, q=100)
        moving = Volume(rng.normal(500, 80, (12, 12, 12)).clip(1))
        out = histogram_match(moving, table)
        got = np.quantile(out.data[out.data != 0].astype(np.float64), table.levels)
        gaps = np.diff(table.values)
        local = 2 * np.maximum(np.r_[gaps[0], gaps], np.r_[gaps, gaps[-1]])
        assert np.all(np.abs(got - table.values) <= local + 1e-4)

    def test_idempotent(self):
        rng = np.random.default_rng(2)
        table = build_reference_histogram([Volume(rng.gamma(2, 30, (10, 10, 10)))], q=200)
        once = histogram_match(Volume(rng.normal(300, 50, (9, 9, 9)).clip(1)), table)
        twice = histogram_match(once, table)
        step = np.diff(table.values).max()
        assert np.max(np.abs(twice.data - once.data)) <= step


class TestMinMax:
    def test_example(self):
        np.testing.assert_array_equal(minmax_normalize(vol([2, 4, 6])).data.ravel(), [0, 127.5, 255])

    def test_fixed_point(self):
        data = np.arange(256, dtype=np.float32)
        np.testing.assert_array_equal(minmax_normalize(vol(data)).data.ravel(), data)

    def test_constant_rejected(self):
        with pytest.raises(DegenerateVolume):
            minmax_normalize(vol([3, 3, 3]))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float32, st.integers(2, 100), elements=st.floats(0, 1e4, width=32)))
    def test_range_and_idempotence(self, data):
        if data.max() == data.min():
            return
        once = minmax_normalize(vol(data))
        assert once.data.min() == 0 and once.data.max() == 255
        twice = minmax_normalize(once)
        np.testing.assert_array_equal(once.data, twice.data)

    def test_background_kept_zero(self):
        out = minmax_normalize(vol([0, 0, 10, 20])).data.ravel()
        np.testing.assert_array_equal(out, [0, 0, 127.5, 255])


class TestSlicing:
    def test_center_forty_of_91(self):
        slices = extract_center_slices(np.zeros((91, 109, 91)), 40)
        assert [s.source_index for s in slices] == list(range(25, 65))
        assert slices[0].data.shape == (91, 109)

    def test_whole_stack(self):
        assert [s.source_index for s in extract_center_slices(np.zeros((3, 3, 40)), 40)] == list(range(40))

    def test_single(self):
        assert extract_center_slices(np.zeros((2, 2, 91)), 1)[0].source_index == 45

    def test_slice_contents(self):
        data = np.random.default_rng(0).normal(size=(5, 6, 7)).astype(np.float32)
        for s in extract_center_slices(Volume(data), 3, subject_id="s1"):
            np.testing.assert_array_equal(s.data, data[:, :, s.source_index])
            assert s.subject_id == "s1"

    def test_k_too_large(self):
        with pytest.raises(KTooLarge):
            extract_center_slices(np.zeros((2, 2, 5)), 6)

    def test_crop_offsets(self):
        data = np.arange(91 * 109, dtype=np.float32).reshape(91, 109)
        out = center_crop(Slice(data, 0), 86, 104)
        assert out.data.shape == (86, 104)
        np.testing.assert_array_equal(out.data, data[2:88, 2:106])

    def test_crop_identity_and_center(self):
        data = np.arange(9, dtype=np.float32).reshape(3, 3)
        np.testing.assert_array_equal(center_crop(Slice(data, 0), 3, 3).data, data)
        assert center_crop(Slice(data, 0), 1, 1).data.item() == 4

    def test_crop_too_large(self):
        with pytest.raises(TargetTooLarge):
            center_crop(Slice(np.zeros((3, 3)), 0), 4, 3)

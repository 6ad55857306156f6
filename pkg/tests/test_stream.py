import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evkit.stream import Event, EventStream, SensorConfig, merge_streams, slice_stream

from conftest import random_stream

SENSOR = SensorConfig(width=64, height=48)


def make(ts, sensor=SENSOR):
    n = len(ts)
    return EventStream.from_arrays([1] * n, [2] * n, ts, [1] * n, sensor)


class TestConstruction:
    def test_rejects_unsorted(self):
        with pytest.raises(ValueError, match="non-decreasing"):
            make([5, 3])

    def test_rejects_out_of_range_coords(self):
        with pytest.raises(ValueError, match="resolution"):
            EventStream.from_arrays([64], [0], [0], [1], SENSOR)

    def test_rejects_bad_polarity(self):
        with pytest.raises(ValueError, match="polarit"):
            EventStream.from_arrays([0], [0], [0], [2], SENSOR)

    def test_arrays_immutable(self):
        s = make([1, 2])
        with pytest.raises(ValueError):
            s.t[0] = 7

    def test_event_access(self):
        s = EventStream.from_arrays([3], [4], [0], [1], SENSOR)
        assert s[0] == Event(x=3, y=4, t=0, p=1)


class TestSlice:
    def test_half_open_interval(self):
        s = make([0, 1000, 5000, 9000])
        out = slice_stream(s, 1000, 9000)
        assert out.t.tolist() == [1000, 5000]

    def test_empty_interval(self):
        s = make([0, 1000])
        assert len(slice_stream(s, 0, 0)) == 0

    def test_rejects_inverted_interval(self):
        with pytest.raises(ValueError):
            slice_stream(make([0]), 5, 1)

    def test_full_range_identity(self, rng, small_sensor):
        s = random_stream(rng, 500, small_sensor)
        out = slice_stream(s, 0, int(s.t[-1]) + 1)
        assert np.array_equal(out.t, s.t) and np.array_equal(out.x, s.x)

    def test_matches_linear_scan_oracle(self, rng, small_sensor):
        s = random_stream(rng, 10_000, small_sensor)
        for _ in range(100):
            a, b = sorted(rng.integers(0, 1_000_001, size=2))
            keep = (s.t >= a) & (s.t < b)  # linear-filter oracle
            out = slice_stream(s, int(a), int(b))
            assert np.array_equal(out.t, s.t[keep])
            assert np.array_equal(out.x, s.x[keep])
            assert np.array_equal(out.y, s.y[keep])
            assert np.array_equal(out.p, s.p[keep])

    @given(st.lists(st.integers(0, 10_000), min_size=0, max_size=50),
           st.integers(0, 10_000), st.integers(0, 10_000), st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_adjacent_slices_concatenate(self, ts, a, b, c):
        a, b, c = sorted([a, b, c])
        s = make(sorted(ts))
        left = slice_stream(s, a, b)
        right = slice_stream(s, b, c)
        both = slice_stream(s, a, c)
        assert np.array_equal(np.concatenate([left.t, right.t]), both.t)


class TestMerge:
    def test_orders_by_time(self):
        a, b = make([1]), make([2])
        assert merge_streams(b, a).t.tolist() == [1, 2]

    def test_empty_identity(self):
        b = make([3, 7])
        out = merge_streams(make([]), b)
        assert np.array_equal(out.t, b.t)

    def test_stable_for_ties(self):
        a = EventStream.from_arrays([1], [0], [5], [1], SENSOR)
        b = EventStream.from_arrays([2], [0], [5], [-1], SENSOR)
        out = merge_streams(a, b)
        assert out.x.tolist() == [1, 2]  # a's event first

    def test_resolution_mismatch(self):
        other = EventStream.from_arrays([0], [0], [0], [1], SensorConfig(width=32, height=32))
        with pytest.raises(ValueError, match="mismatch"):
            merge_streams(make([0]), other)

    def test_matches_sort_concatenate_oracle(self, rng, small_sensor):
        a = random_stream(rng, 300, small_sensor)
        b = random_stream(rng, 200, small_sensor)
        out = merge_streams(a, b)
        t = np.concatenate([a.t, b.t])
        order = np.argsort(t, kind="stable")
        assert np.array_equal(out.t, t[order])
        assert np.array_equal(out.x, np.concatenate([a.x, b.x])[order])

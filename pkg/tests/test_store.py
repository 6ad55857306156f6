import numpy as np
import pytest

from evkit.props import read_props
from evkit.stream import EventStream, FlowField, GrayFrame, SensorConfig, slice_stream
from evkit.store import (
    Container,
    OutOfRangeError,
    accumulate_flow,
    export_text,
    import_text,
    sidecar_path,
    write_container,
)

from conftest import random_stream

SENSOR = SensorConfig(width=64, height=48)


def make_frames(rng, n, t0=0, dt=50_000, shape=(48, 64)):
    return [GrayFrame(t0 + i * dt, rng.random(shape, dtype=np.float32)) for i in range(n)]


def make_flows(frames, rng):
    out = []
    for a, b in zip(frames, frames[1:]):
        h, w = a.image.shape
        out.append(FlowField(a.t, b.t,
                             rng.normal(size=(h, w)).astype(np.float32),
                             rng.normal(size=(h, w)).astype(np.float32)))
    return out


@pytest.fixture
def container(tmp_path, rng):
    frames = make_frames(rng, 11)
    flows = make_flows(frames, rng)
    events = random_stream(rng, 5000, SENSOR, t_max=500_000)
    c = write_container(events, frames, flows, tmp_path / "seq.evz",
                        props={"seeds": {"scene": 1}})
    return c, events, frames, flows


class TestRoundTrip:
    def test_events_bit_exact(self, container):
        c, events, _, _ = container
        out = c.all_events()
        assert np.array_equal(out.x, events.x)
        assert np.array_equal(out.y, events.y)
        assert np.array_equal(out.t, events.t)
        assert np.array_equal(out.p, events.p)

    def test_frames_and_flow_bit_exact(self, container):
        c, _, frames, flows = container
        for i, f in enumerate(frames):
            got = c.gray_frame(i)
            assert got.t == f.t
            assert np.array_equal(got.image, f.image)
        for i, f in enumerate(flows):
            got = c.flow_field(i)
            assert (got.t0, got.t1) == (f.t0, f.t1)
            assert np.array_equal(got.u, f.u)
            assert np.array_equal(got.v, f.v)

    def test_empty_stream_valid(self, tmp_path, rng):
        frames = make_frames(rng, 3)
        c = write_container(EventStream.empty(SENSOR), frames, make_flows(frames, rng),
                            tmp_path / "empty.evz")
        assert c.n_events == 0
        assert len(c.all_events()) == 0
        assert len(c.read_slice(0, 100_000).events) == 0

    def test_compresses_below_raw(self, tmp_path, rng):
        n = 1_000_000
        events = random_stream(rng, n, SensorConfig(width=1280, height=720),
                               t_max=10_000_000)
        path = tmp_path / "big.evz"
        write_container(events, [], [], path).close()
        raw_columnar = n * (2 + 2 + 8 + 1)
        assert path.stat().st_size < raw_columnar

    def test_deterministic_bytes(self, tmp_path, rng):
        frames = make_frames(rng, 4)
        flows = make_flows(frames, rng)
        events = random_stream(rng, 1000, SENSOR, t_max=150_000)
        p1, p2 = tmp_path / "a.evz", tmp_path / "b.evz"
        write_container(events, frames, flows, p1).close()
        write_container(events, frames, flows, p2).close()
        assert p1.read_bytes() == p2.read_bytes()
        assert (tmp_path / "a.props").read_bytes() == (tmp_path / "b.props").read_bytes()

    def test_sidecar_props(self, container, tmp_path):
        c, events, frames, flows = container
        props = read_props(sidecar_path(c.path))
        assert props["counts.events"] == len(events)
        assert props["sensor.width"] == SENSOR.width
        assert props["seeds.scene"] == 1


class TestTimeMaps:
    def test_ms_map_bracket_invariant(self, container):
        c, events, _, _ = container
        t = events.t
        for k in range(len(c.ms_to_event)):
            i = int(c.ms_to_event[k])
            if i < len(t):
                assert t[i] >= k * 1000
            if i > 0:
                assert t[i - 1] < k * 1000

    def test_event_to_gray_bracket(self, container):
        c, events, frames, _ = container
        gray_t = np.array([f.t for f in frames])
        e2g = c.event_to_gray()
        for i in range(0, len(events), 97):
            j = int(e2g[i])
            assert gray_t[j] <= events.t[i]
            if j + 1 < len(gray_t):
                assert events.t[i] < gray_t[j + 1]


class TestReadSlice:
    def test_matches_in_memory_oracle(self, container, rng):
        c, events, _, _ = container
        for _ in range(200):
            a, b = np.sort(rng.integers(0, 500_001, size=2))
            got = c.read_slice(int(a), int(b)).events
            ref = slice_stream(events, int(a), int(b))
            assert np.array_equal(got.t, ref.t)
            assert np.array_equal(got.x, ref.x)
            assert np.array_equal(got.y, ref.y)
            assert np.array_equal(got.p, ref.p)

    def test_enclosing_frames(self, container):
        c, _, frames, _ = container
        s = c.read_slice(60_000, 120_000)
        assert s.gray_start.t == 50_000  # latest frame at-or-before start
        assert s.gray_end.t == 150_000   # first frame at-or-after end
        assert not s.gray_end_clamped

    def test_gray_end_clamps_to_last(self, tmp_path, rng):
        # events keep going past the final frame; flows omitted so the
        # span stays readable
        frames = make_frames(rng, 3)  # t = 0, 50 ms, 100 ms
        events = random_stream(rng, 200, SENSOR, t_max=150_000)
        c = write_container(events, frames, [], tmp_path / "tail.evz")
        s = c.read_slice(90_000, c.t_end)
        assert s.gray_end.t == frames[-1].t
        assert s.gray_end_clamped

    def test_single_flow_interval_unchanged(self, container):
        c, _, _, flows = container
        f = flows[3]
        s = c.read_slice(f.t0, f.t1)
        assert np.allclose(s.flow.u, f.u, atol=1e-6)
        assert np.allclose(s.flow.v, f.v, atol=1e-6)

    def test_out_of_range_named(self, container):
        c, _, _, _ = container
        with pytest.raises(OutOfRangeError, match=r"\[0, 500000\)"):
            c.read_slice(0, 600_000)

    def test_slice_before_first_frame_errors(self, tmp_path, rng):
        frames = make_frames(rng, 3, t0=100_000)
        events = random_stream(rng, 50, SENSOR, t_max=190_000)
        c = write_container(events, frames, make_flows(frames, rng), tmp_path / "c.evz")
        lo = c.t_lo
        if lo < 100_000:  # events may begin before the first frame
            with pytest.raises(OutOfRangeError, match="precedes first frame"):
                c.read_slice(lo, 150_000)


class TestIterate:
    def test_gray_index_fencepost(self, container):
        c, _, frames, _ = container
        slices = list(c.iterate("gray-index", 1))
        assert len(slices) == len(frames) - 1
        for s, a, b in zip(slices, frames, frames[1:]):
            assert (s.t_start, s.t_end) == (a.t, b.t)

    def test_time_full_duration_single_slice(self, container):
        c, events, _, _ = container
        slices = list(c.iterate("time", c.t_end - c.t_lo))
        assert len(slices) == 1
        assert np.array_equal(slices[0].events.t, events.t)

    def test_event_count_partitions_exactly(self, container):
        c, events, _, _ = container
        got = np.concatenate([s.events.t for s in c.iterate("event-count", 617)])
        assert np.array_equal(got, events.t)

    def test_time_partitions_exactly(self, container):
        c, events, _, _ = container
        got = np.concatenate([s.events.t for s in c.iterate("time", 37_001)])
        assert np.array_equal(got, events.t)

    def test_bad_mode(self, container):
        with pytest.raises(ValueError, match="mode"):
            list(container[0].iterate("nope", 1))


class TestAccumulateFlow:
    def test_two_constant_intervals_sum(self):
        h, w = 8, 8
        one = np.ones((h, w), np.float32)
        f1 = FlowField(0, 100, one, 0 * one)
        f2 = FlowField(100, 200, one, 0 * one)
        out = accumulate_flow([f1, f2], 0, 200)
        assert np.allclose(out.u, 2.0) and np.allclose(out.v, 0.0)

    def test_fractional_interval(self):
        h, w = 8, 8
        f = FlowField(0, 100, np.full((h, w), 2.0, np.float32), np.zeros((h, w), np.float32))
        out = accumulate_flow([f], 0, 50)
        assert np.allclose(out.u, 1.0)

    def test_gap_errors(self):
        h, w = 4, 4
        z = np.zeros((h, w), np.float32)
        with pytest.raises(ValueError, match="gap"):
            accumulate_flow([FlowField(0, 100, z, z), FlowField(150, 250, z, z)], 0, 250)

    def test_matches_trajectory_integration_oracle(self, rng):
        # smooth spatially varying fields; oracle integrates each pixel's
        # trajectory at 10x temporal supersampling with bilinear lookups
        h, w = 24, 24
        gy, gx = np.mgrid[0:h, 0:w].astype(np.float64)
        fields = []
        n_int = 4
        for i in range(n_int):
            u = 0.6 * np.sin(np.pi * gx / w + i) * np.cos(np.pi * gy / h)
            v = 0.4 * np.cos(np.pi * gx / w) * np.sin(np.pi * gy / h + i)
            fields.append(FlowField(i * 100, (i + 1) * 100,
                                    u.astype(np.float32), v.astype(np.float32)))
        got = accumulate_flow(fields, 0, n_int * 100)

        def sample(img, x, y):
            x = min(max(x, 0.0), w - 1.0)
            y = min(max(y, 0.0), h - 1.0)
            x0, y0 = int(np.floor(x)), int(np.floor(y))
            x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
            fx, fy = x - x0, y - y0
            top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
            bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
            return top * (1 - fy) + bot * fy

        sub = 10
        err = 0.0
        for py in range(0, h, 3):
            for px in range(0, w, 3):
                x, y = float(px), float(py)
                for f in fields:
                    for _ in range(sub):
                        x += sample(np.asarray(f.u, float), x, y) / sub
                        y += sample(np.asarray(f.v, float), x, y) / sub
                err = max(err, abs(x - px - got.u[py, px]), abs(y - py - got.v[py, px]))
        assert err < 0.1


class TestTextInterchange:
    def test_direct_parse(self, tmp_path):
        p = tmp_path / "ev.txt"
        p.write_text("0 3 4 1\n")
        s = import_text(p, SENSOR)
        assert s[0] == (3, 4, 0, 1)

    def test_rejects_out_of_range(self, tmp_path):
        p = tmp_path / "ev.txt"
        p.write_text("0 64 0 1\n")
        with pytest.raises(ValueError, match=":1:"):
            import_text(p, SENSOR)

    def test_malformed_line_number(self, tmp_path):
        p = tmp_path / "ev.txt"
        p.write_text("0 1 2 1\n0 1 2\n")
        with pytest.raises(ValueError, match=":2:"):
            import_text(p, SENSOR)

    def test_round_trip(self, tmp_path, rng, small_sensor):
        s = random_stream(rng, 400, small_sensor)
        p = tmp_path / "ev.txt"
        export_text(s, p)
        out = import_text(p, small_sensor)
        assert np.array_equal(out.t, s.t)
        assert np.array_equal(out.x, s.x)
        assert np.array_equal(out.p, s.p)


class TestConcurrentReaders:
    def test_parallel_slices_match(self, container):
        import concurrent.futures as cf

        c, events, _, _ = container
        spans = [(i * 40_000, i * 40_000 + 60_000) for i in range(8)]

        def work(span):
            return c.read_slice(*span).events.t

        with cf.ThreadPoolExecutor(max_workers=4) as ex:
            got = list(ex.map(work, spans))
        for span, ts in zip(spans, got):
            assert np.array_equal(ts, slice_stream(events, *span).t)

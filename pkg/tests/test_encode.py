import numpy as np
import pytest

from evkit.encode import (
    EncoderConfig,
    augment_crop,
    augment_flip,
    augment_noise,
    augment_rotate90,
    augment_time_warp,
    encode_count,
    encode_gaussian,
    flip_flow,
    rotate90_flow,
)
from evkit.stream import EventStream, FlowField, SensorConfig

from conftest import random_stream

SENSOR = SensorConfig(width=16, height=12)


def stream_of(tuples, sensor=SENSOR):
    return EventStream.from_events(tuples, sensor)


class TestCountEncoder:
    def test_direct_count(self):
        s = stream_of([(3, 4, 10, 1), (3, 4, 20, 1), (3, 4, 30, -1)])
        vol = encode_count(s, EncoderConfig(bins=1), 0, 100)
        assert vol.values[0, 0, 4, 3] == 2
        assert vol.values[0, 1, 4, 3] == 1
        signed = encode_count(s, EncoderConfig(bins=1, channel_mode="signed"), 0, 100)
        assert signed.values[0, 0, 4, 3] == 1

    def test_empty_stream_zeros(self):
        vol = encode_count(EventStream.empty(SENSOR), EncoderConfig(bins=3), 0, 300)
        assert vol.values.shape == (3, 2, 12, 16)
        assert not vol.values.any()

    def test_empty_span_errors(self):
        with pytest.raises(ValueError, match="empty span"):
            encode_count(EventStream.empty(SENSOR), EncoderConfig(bins=1))

    def test_matches_loop_oracle(self, rng):
        s = random_stream(rng, 2000, SENSOR, t_max=40_000)
        cfg = EncoderConfig(bins=4)
        vol = encode_count(s, cfg, 0, 40_000)
        ref = np.zeros_like(vol.values)
        for x, y, t, p in s:  # naive per-event accumulation
            b = min(t * 4 // 40_000, 3)
            ref[b, 0 if p > 0 else 1, y, x] += 1
        assert np.array_equal(vol.values, ref)

    def test_conservation(self, rng):
        s = random_stream(rng, 3000, SENSOR, t_max=40_000)
        vol = encode_count(s, EncoderConfig(bins=5), 0, 40_000)
        assert vol.values.sum() == len(s)


class TestGaussianEncoder:
    def test_peak_weight_at_center(self):
        # bin 0 of 2 over [0, 200) has center 50
        s = stream_of([(1, 1, 50, 1)])
        vol = encode_gaussian(s, EncoderConfig(scheme="gaussian", bins=2), 0, 200)
        assert vol.values[0, 0, 1, 1] == pytest.approx(1.0)

    def test_weight_one_sigma_away(self):
        # lam=0.5, bins=1 over [0, 100): center 50, sigma 50
        s = stream_of([(1, 1, 100, 1)])
        vol = encode_gaussian(s, EncoderConfig(scheme="gaussian", bins=1, lam=0.5), 0, 100)
        assert vol.values[0, 0, 1, 1] == pytest.approx(np.exp(-0.5))

    def test_matches_loop_oracle(self, rng):
        s = random_stream(rng, 1500, SENSOR, t_max=40_000)
        cfg = EncoderConfig(scheme="gaussian", bins=4, lam=0.5)
        vol = encode_gaussian(s, cfg, 0, 40_000)
        width = 40_000 / 4
        ref = np.zeros_like(vol.values)
        for x, y, t, p in s:
            for b in range(4):
                mu = (b + 0.5) * width
                w = np.exp(-((t - mu) ** 2) / (2 * (0.5 * width) ** 2))
                ref[b, 0 if p > 0 else 1, y, x] += w
        assert np.allclose(vol.values, ref, atol=1e-9)

    def test_kernel_override_degenerates_to_count(self, rng):
        s = random_stream(rng, 800, SENSOR, t_max=10_000)
        cfg_g = EncoderConfig(scheme="gaussian", bins=1)
        cfg_c = EncoderConfig(bins=1)
        vol = encode_gaussian(s, cfg_g, 0, 10_000, kernel=lambda t, mu, sg: np.ones_like(t))
        ref = encode_count(s, cfg_c, 0, 10_000)
        assert np.array_equal(vol.values, ref.values)


class TestTimeWarp:
    def test_identity(self, rng):
        s = random_stream(rng, 100, SENSOR)
        assert np.array_equal(augment_time_warp(s, 1.0).t, s.t)

    def test_direct_scaling(self):
        s = stream_of([(0, 0, 1, 1), (0, 0, 3, 1)])
        assert augment_time_warp(s, 2.0).t.tolist() == [2, 6]

    def test_inverse_pair_within_rounding(self, rng):
        s = random_stream(rng, 500, SENSOR)
        back = augment_time_warp(augment_time_warp(s, 0.5), 2.0)
        assert np.max(np.abs(back.t - s.t)) <= 1


class TestNoise:
    def test_rate_zero_identity(self, rng):
        s = random_stream(rng, 100, SENSOR)
        assert augment_noise(s, 0.0, seed=1) is s

    def test_deterministic_per_seed(self, rng):
        s = random_stream(rng, 100, SENSOR)
        a = augment_noise(s, 5.0, seed=42)
        b = augment_noise(s, 5.0, seed=42)
        assert np.array_equal(a.t, b.t) and np.array_equal(a.x, b.x)

    def test_count_statistics(self):
        sensor = SensorConfig(width=64, height=64)
        base = EventStream.from_arrays([0, 0], [0, 0], [0, 999_999], [1, 1], sensor)
        mean = 10.0 * 64 * 64 * (1_000_000 / 1e6)  # 40960
        added = [len(augment_noise(base, 10.0, seed=k)) - 2 for k in range(100)]
        sigma = np.sqrt(mean / 100)  # std of the mean of 100 Poisson draws
        assert abs(np.mean(added) - mean) < 5 * sigma


class TestFlip:
    def test_double_flip_identity(self, rng):
        s = random_stream(rng, 200, SENSOR)
        out = augment_flip(augment_flip(s, "horizontal"), "horizontal")
        assert np.array_equal(out.x, s.x)

    def test_horizontal_maps_edge(self):
        s = stream_of([(0, 0, 0, 1)], SensorConfig(width=4, height=4))
        assert augment_flip(s, "horizontal").x[0] == 3

    def test_polarity(self, rng):
        s = random_stream(rng, 50, SENSOR)
        assert np.array_equal(augment_flip(s, "polarity").p, -s.p)

    def test_flow_metric_equivariance(self, rng):
        # AEE of a prediction is unchanged when stream, gt and prediction
        # are all flipped
        from evkit.metrics import aee, event_mask

        h, w = SENSOR.height, SENSOR.width
        gt = FlowField(0, 100, rng.normal(size=(h, w)).astype(np.float32),
                       rng.normal(size=(h, w)).astype(np.float32))
        pred = FlowField(0, 100, rng.normal(size=(h, w)).astype(np.float32),
                         rng.normal(size=(h, w)).astype(np.float32))
        s = random_stream(rng, 300, SENSOR)
        base = aee(pred, gt, event_mask(s))
        flipped = aee(flip_flow(pred, "horizontal"), flip_flow(gt, "horizontal"),
                      event_mask(augment_flip(s, "horizontal")))
        assert flipped == pytest.approx(base, rel=1e-12)


class TestSpatial:
    def test_full_crop_identity(self, rng):
        s = random_stream(rng, 200, SENSOR)
        out = augment_crop(s, 0, 0, SENSOR.width, SENSOR.height)
        assert np.array_equal(out.x, s.x) and np.array_equal(out.y, s.y)

    def test_empty_window_errors(self, rng):
        with pytest.raises(ValueError, match="window"):
            augment_crop(random_stream(rng, 10, SENSOR), 0, 0, 0, 5)

    def test_rotate_four_times_identity(self, rng):
        s = random_stream(rng, 200, SENSOR)
        out = augment_rotate90(augment_rotate90(s, 3), 1)
        assert np.array_equal(out.x, s.x) and np.array_equal(out.y, s.y)

    def test_rotate_flow_consistent_with_coords(self, rng):
        # a displacement mapping P -> Q must, after rotation, map
        # rot(P) -> rot(Q)
        h, w = SENSOR.height, SENSOR.width
        u = rng.normal(size=(h, w)).astype(np.float32)
        v = rng.normal(size=(h, w)).astype(np.float32)
        rot = rotate90_flow(FlowField(0, 100, u, v), 1)
        x, y = 5, 3
        xr, yr = h - 1 - y, x  # clockwise coordinate map
        assert rot.u[yr, xr] == pytest.approx(-v[y, x])
        assert rot.v[yr, xr] == pytest.approx(u[y, x])

    def test_crop_commutes_with_encode(self, rng):
        s = random_stream(rng, 2000, SENSOR, t_max=10_000)
        cfg = EncoderConfig(bins=2)
        x0, y0, w, h = 4, 2, 8, 6
        cropped = encode_count(augment_crop(s, x0, y0, w, h), cfg, 0, 10_000)
        windowed = encode_count(s, cfg, 0, 10_000).values[:, :, y0:y0 + h, x0:x0 + w]
        assert np.array_equal(cropped.values, windowed)


class TestProperties:
    def test_augmentations_preserve_sortedness(self, rng):
        s = random_stream(rng, 500, SENSOR)
        for out in (augment_time_warp(s, 0.37), augment_noise(s, 3.0, seed=9),
                    augment_flip(s, "vertical"), augment_rotate90(s, 2)):
            assert np.all(np.diff(out.t) >= 0)

import numpy as np
import pytest

from evkit.render import (
    CameraTrajectory,
    FishTrack,
    RenderScene,
    _Camera,
    compose_dataset,
    make_texture,
    preset_trajectory,
    render_sequence,
    warp_check,
)
from evkit.stream import EventStream, SensorConfig

SENSOR = SensorConfig(width=96, height=96, frame_rate=20.0, compare_rate=20.0)


def still_trajectory(duration_us=1_000_000, altitude=2.0):
    t = np.array([0, duration_us])
    p = np.array([[0.0, 0.0, -altitude], [0.0, 0.0, -altitude]])
    return CameraTrajectory(t, p, np.zeros(2))


def linear_trajectory(velocity, duration_us=1_000_000, altitude=2.0, yaw=0.0):
    t = np.array([0, duration_us])
    v = np.asarray(velocity, dtype=np.float64)
    p = np.stack([[0.0, 0.0, -altitude],
                  [v[0] * duration_us / 1e6, v[1] * duration_us / 1e6, -altitude]])
    return CameraTrajectory(t, p, np.full(2, yaw))


def basic_scene(seed=0, **kw):
    return RenderScene(ground_texture=make_texture(seed), **kw)


class TestTrajectory:
    def test_rejects_overspeed(self):
        t = np.array([0, 1_000_000])
        p = np.array([[0.0, 0, -2.0], [2.0, 0, -2.0]])  # 2 m/s
        with pytest.raises(ValueError, match="max speed"):
            CameraTrajectory(t, p, np.zeros(2))

    def test_presets_cover_duration(self):
        for name in ("down-constant-altitude", "forward-varying-depth"):
            traj, pitch = preset_trajectory(name, duration=2.0, seed=1)
            assert traj.t_end >= 2_000_000
            assert pitch >= 0.0


class TestRenderBasics:
    def test_static_zero_flow(self):
        samples = render_sequence(basic_scene(), still_trajectory(), SENSOR,
                                  duration=0.2, fps=10.0)
        assert len(samples) == 2
        flow = samples[0].flow
        assert np.abs(flow.u).max() < 1e-9
        assert np.abs(flow.v).max() < 1e-9

    def test_camera_below_ground_errors(self):
        t = np.array([0, 1_000_000])
        p = np.array([[0.0, 0, 1.0], [0.0, 0, 1.0]])  # below plane (z down)
        traj = CameraTrajectory(t, p, np.zeros(2))
        with pytest.raises(ValueError, match="above the ground"):
            render_sequence(basic_scene(), traj, SENSOR, duration=0.2, fps=10.0)

    def test_deterministic_and_thread_invariant(self):
        scene = basic_scene(seed=4)
        traj = linear_trajectory((0.4, -0.2))
        a = render_sequence(scene, traj, SENSOR, duration=0.3, fps=10.0, threads=1)
        b = render_sequence(scene, traj, SENSOR, duration=0.3, fps=10.0, threads=4)
        for sa, sb in zip(a, b):
            assert sa.frame.image.tobytes() == sb.frame.image.tobytes()


class TestGroundTruthFlow:
    def test_pure_translation_uniform_flow(self):
        altitude = 2.0
        vel_east = 0.5  # m/s along world y = image x for yaw 0
        traj = linear_trajectory((0.0, vel_east), altitude=altitude)
        samples = render_sequence(basic_scene(), traj, SENSOR, duration=0.2, fps=10.0)
        flow = samples[0].flow
        cam = _Camera(SENSOR, 0.0)
        delta = vel_east * 0.1  # meters over one frame interval
        expected_u = -cam.f * delta / altitude
        assert np.abs(flow.u - expected_u).max() < 1e-6  # uniform and exact
        assert np.abs(flow.v).max() < 1e-6

    def test_uniformity_exact(self):
        traj = linear_trajectory((0.3, 0.4))
        samples = render_sequence(basic_scene(), traj, SENSOR, duration=0.2, fps=10.0)
        flow = samples[0].flow
        assert flow.u.max() - flow.u.min() < 1e-9
        assert flow.v.max() - flow.v.min() < 1e-9

    def test_correspondence_oracle_random_trajectory(self, rng):
        # independent check: project random ground points through both
        # poses; the flow field sampled at the first projection must agree
        # with the displacement of the second
        t = (np.arange(6) * 100_000).astype(np.int64)
        pos = np.cumsum(rng.uniform(-0.05, 0.05, size=(6, 3)), axis=0)
        pos[:, 2] = -2.0 + 0.1 * rng.random(6)
        yaws = np.cumsum(rng.uniform(-0.1, 0.1, size=6))
        traj = CameraTrajectory(t, pos, yaws)
        scene = basic_scene(seed=2)
        samples = render_sequence(scene, traj, SENSOR, duration=0.5, fps=10.0)
        cam = _Camera(SENSOR, scene.pitch)
        worst = 0.0
        for k in range(len(samples) - 1):
            flow = samples[k].flow
            p0, y0 = traj.pose_at(samples[k].frame.t)
            p1, y1 = traj.pose_at(samples[k + 1].frame.t)
            pts = np.stack([rng.uniform(-1.0, 1.0, 40), rng.uniform(-1.0, 1.0, 40),
                            np.zeros(40)], axis=1)
            ax, ay, _ = cam.project(pts, p0, y0)
            bx, by, _ = cam.project(pts, p1, y1)
            ok = (ax > 1) & (ax < SENSOR.width - 2) & (ay > 1) & (ay < SENSOR.height - 2)
            for x, y, ex, ey in zip(ax[ok], ay[ok], (bx - ax)[ok], (by - ay)[ok]):
                ix, iy = int(round(x)), int(round(y))
                if samples[k].layers[iy, ix] != 0:
                    continue  # fish-free scene, but keep the guard honest
                from evkit.interp import bilinear_sample

                got_u = float(bilinear_sample(flow.u.astype(np.float64),
                                              np.array([x]), np.array([y]))[0])
                got_v = float(bilinear_sample(flow.v.astype(np.float64),
                                              np.array([x]), np.array([y]))[0])
                worst = max(worst, abs(got_u - ex), abs(got_v - ey))
        assert worst < 1e-3

    def test_fish_pixels_carry_sprite_motion(self):
        fish = FishTrack(np.array([0, 1_000_000]),
                         np.array([[0.0, 0.0, -1.0], [0.5, 0.0, -1.0]]),
                         half_size=0.3)
        scene = basic_scene(seed=3, fish=(fish,))
        samples = render_sequence(scene, still_trajectory(), SENSOR,
                                  duration=0.2, fps=10.0)
        s = samples[0]
        assert (s.layers == 1).any()
        # background is static, fish moves: its pixels must have nonzero
        # flow (north motion maps to image -y in the down-looking frame)
        fish_px = s.layers == 1
        assert np.abs(s.flow.v[fish_px]).min() > 0.1
        assert np.abs(s.flow.v[~fish_px]).max() < 1e-9
        # nearest layer owns the pixel: fish at 1 m depth versus ground 2 m
        cam = _Camera(SENSOR, 0.0)
        expected_v = -cam.f * 0.05 / 1.0  # 0.05 m over 100 ms at 1 m depth
        assert np.allclose(s.flow.v[fish_px], expected_v, atol=1e-6)


class TestWarpCheck:
    def test_zero_flow_identical_frames(self):
        samples = render_sequence(basic_scene(), still_trajectory(), SENSOR,
                                  duration=0.2, fps=10.0)
        r = warp_check(samples[0].frame, samples[1].frame, samples[0].flow)
        assert r == pytest.approx(0.0, abs=1e-12)

    def test_true_flow_small_residual_and_comparative(self, rng):
        traj = linear_trajectory((0.5, 0.3))
        samples = render_sequence(basic_scene(seed=5), traj, SENSOR,
                                  duration=0.2, fps=10.0)
        s0, s1 = samples[0], samples[1]
        base = warp_check(s0.frame, s1.frame, s0.flow, s0.layers, s1.layers)
        assert base < 0.02
        from evkit.stream import FlowField

        corrupted = FlowField(s0.flow.t0, s0.flow.t1, s0.flow.u + 5.0,
                              s0.flow.v + 5.0)
        assert warp_check(s0.frame, s1.frame, corrupted, s0.layers, s1.layers) > base


class TestComposeDataset:
    def test_fencepost_and_roundtrip(self, tmp_path):
        scene = basic_scene(seed=6)
        traj = linear_trajectory((0.2, 0.1), duration_us=5_000_000)
        samples = render_sequence(scene, traj, SENSOR, duration=5.0, fps=20.0)
        assert len(samples) == 100
        events = EventStream.from_arrays([1], [1], [123_456], [1], SENSOR)
        c = compose_dataset(samples, events, tmp_path / "seq.evz")
        assert c.n_gray == 100
        assert c.n_flow == 99
        slices = list(c.iterate("gray-index", 1))
        assert len(slices) == 99
        got = c.gray_frame(7)
        assert np.array_equal(got.image, samples[7].frame.image)

    def test_cadence_mismatch_errors(self, tmp_path):
        samples = render_sequence(basic_scene(), still_trajectory(), SENSOR,
                                  duration=0.3, fps=10.0)
        bad = [samples[0], samples[2]]  # dropped middle frame
        events = EventStream.empty(SENSOR)
        with pytest.raises(ValueError, match="cadence"):
            compose_dataset(bad, events, tmp_path / "bad.evz")

"""Deterministic desk-scale renderer with exact analytic ground-truth flow.

Geometry is deliberately minimal so ground truth is closed-form: a tiled
textured ground plane at constant depth (NED, z down, z_ground below the
camera), coral decals painted onto that plane at their scene-synth
positions, and fish rendered as horizontal textured quads that translate
rigidly between frames. A pinhole camera (focal length from the field of
view) moves along a trajectory interpolated linearly in position and yaw,
with a fixed pitch per sequence (0 = straight down).

Ground-truth flow for a background pixel is the closed-form composition
of inverse projection at frame k with forward projection at frame k + 1;
fish pixels displace by their sprite's translation. The nearest layer
wins occlusion and owns the pixel's flow.
"""

from __future__ import annotations

import concurrent.futures as _futures
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .interp import bilinear_sample, bilinear_sample_wrap
from .stream import EventStream, FlowField, GrayFrame, SensorConfig
from .store import Container, write_container

__all__ = [
    "CameraTrajectory",
    "FishTrack",
    "RenderScene",
    "RenderedSample",
    "make_texture",
    "decals_from_placements",
    "render_sequence",
    "warp_check",
    "compose_dataset",
    "preset_trajectory",
]

MAX_CAMERA_SPEED = 0.85  # m/s

# canonical down-looking camera: image x -> east, image y -> south, axis down
_R_DOWN = np.array([[0.0, -1.0, 0.0],
                    [1.0, 0.0, 0.0],
                    [0.0, 0.0, 1.0]])


def _rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass(frozen=True)
class CameraTrajectory:
    """Piecewise-linear camera path: (t_us, position NED, yaw)."""

    times_us: np.ndarray
    positions: np.ndarray
    yaws: np.ndarray
    max_speed: float = MAX_CAMERA_SPEED

    def __post_init__(self) -> None:
        t = np.asarray(self.times_us, dtype=np.int64)
        p = np.asarray(self.positions, dtype=np.float64)
        y = np.asarray(self.yaws, dtype=np.float64)
        if t.ndim != 1 or len(t) < 1 or p.shape != (len(t), 3) or y.shape != (len(t),):
            raise ValueError("trajectory needs matching times, positions and yaws")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("trajectory timestamps must be strictly increasing")
        if len(t) > 1:
            seg = np.linalg.norm(np.diff(p, axis=0), axis=1) / (np.diff(t) / 1e6)
            if np.any(seg > self.max_speed + 1e-9):
                raise ValueError(
                    f"trajectory exceeds max speed {self.max_speed} m/s "
                    f"(fastest segment {seg.max():.3f})"
                )
        object.__setattr__(self, "times_us", t)
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "yaws", y)

    @property
    def t_end(self) -> int:
        return int(self.times_us[-1])

    def pose_at(self, t_us: int):
        t = np.clip(t_us, self.times_us[0], self.times_us[-1])
        pos = np.array([np.interp(t, self.times_us, self.positions[:, k])
                        for k in range(3)])
        yaw = float(np.interp(t, self.times_us, self.yaws))
        return pos, yaw


@dataclass(frozen=True)
class FishTrack:
    """Sampled fish positions; the sprite translates rigidly between frames."""

    times_us: np.ndarray
    positions: np.ndarray   # (T, 3) NED
    half_size: float = 0.12
    texture: np.ndarray | None = None

    def position_at(self, t_us: int) -> np.ndarray:
        t = np.clip(t_us, self.times_us[0], self.times_us[-1])
        return np.array([np.interp(t, self.times_us, self.positions[:, k])
                         for k in range(3)])


@dataclass(frozen=True)
class Decal:
    center: np.ndarray   # (2,) NED x, y on the ground plane
    radius: float
    texture: np.ndarray


@dataclass(frozen=True)
class RenderScene:
    ground_texture: np.ndarray
    texel_size: float = 0.02      # meters per texel
    z_ground: float = 0.0         # plane depth (NED)
    pitch: float = 0.0            # radians; 0 looks straight down
    decals: tuple = ()
    fish: tuple = ()

    def __post_init__(self) -> None:
        tex = np.ascontiguousarray(self.ground_texture, dtype=np.float64)
        if tex.ndim != 2 or tex.size == 0:
            raise ValueError("ground texture must be a non-empty 2-D image")
        if tex.min() < 0 or tex.max() > 1:
            raise ValueError("texture intensities must lie in [0, 1]")
        object.__setattr__(self, "ground_texture", tex)


@dataclass(frozen=True)
class RenderedSample:
    frame: GrayFrame
    flow: FlowField | None      # to the next frame; None for the last sample
    layers: np.ndarray          # per-pixel layer id: 0 ground, i+1 fish i


def make_texture(seed: int, size: int = 256, smoothness: float = 3.0,
                 lo: float = 0.1, hi: float = 0.9) -> np.ndarray:
    """Seeded smooth random texture in [lo, hi] (gaussian-filtered noise)."""
    rng = np.random.default_rng(seed)
    tex = gaussian_filter(rng.random((size, size)), smoothness, mode="wrap")
    tex -= tex.min()
    peak = tex.max()
    if peak > 0:
        tex /= peak
    return lo + tex * (hi - lo)


def _fish_texture(seed: int, size: int = 32) -> np.ndarray:
    """Elliptical sprite: striped body on a NaN-masked background."""
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:size, 0:size]
    cx = cy = (size - 1) / 2.0
    r = ((xs - cx) / (0.48 * size)) ** 2 + ((ys - cy) / (0.30 * size)) ** 2
    body = 0.25 + 0.6 * (0.5 + 0.5 * np.sin(xs / size * rng.uniform(6.0, 12.0)))
    tex = np.where(r <= 1.0, body, np.nan)
    return tex


def decals_from_placements(placements, seed: int = 0, radius_scale: float = 0.5,
                           texture_size: int = 48) -> tuple:
    """Flatten scene placements to ground-plane decals at their (x, y)."""
    rng = np.random.default_rng(seed)
    out = []
    for p in placements:
        tex = gaussian_filter(rng.random((texture_size, texture_size)), 2.0)
        tex -= tex.min()
        peak = tex.max()
        tex = 0.05 + 0.9 * (tex / peak if peak > 0 else tex)
        out.append(Decal(center=np.asarray(p.position[:2], dtype=np.float64),
                         radius=p.scale * radius_scale, texture=tex))
    return tuple(out)


def fish_tracks_from_boids(times_us, positions, seed: int = 0,
                           half_size: float = 0.12) -> tuple:
    """One FishTrack per boid from a (T, n, 3) position history."""
    n = positions.shape[1]
    return tuple(
        FishTrack(np.asarray(times_us, np.int64), positions[:, i, :],
                  half_size=half_size, texture=_fish_texture(seed + i))
        for i in range(n)
    )


class _Camera:
    def __init__(self, sensor: SensorConfig, pitch: float):
        self.w = sensor.width
        self.h = sensor.height
        self.f = (self.w / 2.0) / np.tan(np.radians(sensor.fov_deg) / 2.0)
        self.cx = (self.w - 1) / 2.0
        self.cy = (self.h - 1) / 2.0
        self.pitch = pitch
        gy, gx = np.mgrid[0:self.h, 0:self.w]
        self._dirs_cam = np.stack([(gx - self.cx) / self.f,
                                   (gy - self.cy) / self.f,
                                   np.ones((self.h, self.w))])

    def rotation(self, yaw: float) -> np.ndarray:
        return _rot_z(yaw) @ _rot_y(self.pitch) @ _R_DOWN

    def ray_dirs(self, yaw: float) -> np.ndarray:
        d = np.tensordot(self.rotation(yaw), self._dirs_cam, axes=1)
        if np.any(d[2] <= 1e-9):
            raise ValueError(
                "field of view crosses the horizon; reduce pitch or fov"
            )
        return d

    def project(self, points: np.ndarray, position: np.ndarray, yaw: float):
        """World points (..., 3) to pixel coordinates (x, y) + camera depth."""
        rel = points - position
        cam = np.tensordot(rel, self.rotation(yaw), axes=([-1], [0]))
        z = cam[..., 2]
        px = self.f * cam[..., 0] / z + self.cx
        py = self.f * cam[..., 1] / z + self.cy
        return px, py, z


def _shade_ground(scene: RenderScene, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    img = bilinear_sample_wrap(scene.ground_texture,
                               gx / scene.texel_size, gy / scene.texel_size)
    for decal in scene.decals:
        dx = gx - decal.center[0]
        dy = gy - decal.center[1]
        hit = (np.abs(dx) <= decal.radius) & (np.abs(dy) <= decal.radius)
        if not hit.any():
            continue
        th, tw = decal.texture.shape
        u = (dx[hit] / (2 * decal.radius) + 0.5) * (tw - 1)
        v = (dy[hit] / (2 * decal.radius) + 0.5) * (th - 1)
        img[hit] = bilinear_sample(decal.texture, u, v)
    return img


def _render_frame(scene: RenderScene, cam: _Camera, position, yaw, t_us: int):
    """One frame: intensity, layer map, and the per-pixel world hit points."""
    dirs = cam.ray_dirs(yaw)
    if position[2] >= scene.z_ground:
        raise ValueError("camera must be above the ground plane")
    s_ground = (scene.z_ground - position[2]) / dirs[2]
    gx = position[0] + s_ground * dirs[0]
    gy = position[1] + s_ground * dirs[1]
    img = _shade_ground(scene, gx, gy)
    layers = np.zeros(img.shape, dtype=np.int32)
    hit = np.stack([gx, gy, np.full(img.shape, scene.z_ground)], axis=-1)

    depth = np.full(img.shape, s_ground)
    for i, fish in enumerate(scene.fish):
        p = fish.position_at(t_us)
        if p[2] >= scene.z_ground or p[2] <= position[2]:
            continue  # keep fish strictly between camera and ground
        s_f = (p[2] - position[2]) / dirs[2]
        qx = position[0] + s_f * dirs[0]
        qy = position[1] + s_f * dirs[1]
        inside = ((np.abs(qx - p[0]) <= fish.half_size)
                  & (np.abs(qy - p[1]) <= fish.half_size)
                  & (s_f < depth) & (s_f > 0))
        if not inside.any():
            continue
        tex = fish.texture if fish.texture is not None else _fish_texture(i)
        th, tw = tex.shape
        u = ((qx[inside] - p[0]) / (2 * fish.half_size) + 0.5) * (tw - 1)
        v = ((qy[inside] - p[1]) / (2 * fish.half_size) + 0.5) * (th - 1)
        val = bilinear_sample(tex, u, v)
        opaque = ~np.isnan(val)   # NaN texels are outside the sprite body
        sel = np.nonzero(inside)
        rows = sel[0][opaque]
        cols = sel[1][opaque]
        img[rows, cols] = val[opaque]
        layers[rows, cols] = i + 1
        depth[rows, cols] = s_f[rows, cols]
        hit[rows, cols, 0] = qx[rows, cols]
        hit[rows, cols, 1] = qy[rows, cols]
        hit[rows, cols, 2] = p[2]

    return np.clip(img, 0.0, 1.0), layers, hit


def _flow_between(scene: RenderScene, cam: _Camera, layers, hit, t0: int, t1: int,
                  pose0, pose1) -> FlowField:
    """Analytic flow: each frame-k hit point moves with its layer and
    reprojects through the frame-k+1 camera."""
    pos1, yaw1 = pose1
    points = hit.copy()
    for i, fish in enumerate(scene.fish):
        sel = layers == i + 1
        if sel.any():
            delta = fish.position_at(t1) - fish.position_at(t0)
            points[sel] += delta
    px, py, _ = cam.project(points, pos1, yaw1)
    gy, gx = np.mgrid[0:cam.h, 0:cam.w]
    return FlowField(t0, t1, (px - gx).astype(np.float32), (py - gy).astype(np.float32))


def render_sequence(scene: RenderScene, trajectory: CameraTrajectory,
                    sensor: SensorConfig, duration: float, fps: float,
                    threads: int = 1) -> list[RenderedSample]:
    """Frames at 1/fps spacing over [0, duration) with flow to the next frame.

    Frame k sits at round(k * 1e6 / fps) microseconds; a 5 s sequence at
    20 Hz has 100 frames and 99 flow fields. Rendering is per-frame
    parallel and bit-deterministic regardless of ``threads``.
    """
    if fps <= 0 or duration <= 0:
        raise ValueError("duration and fps must be > 0")
    n = int(round(duration * fps))
    times = [int(round(k * 1e6 / fps)) for k in range(n)]
    if trajectory.t_end < times[-1]:
        raise ValueError(
            f"trajectory ends at {trajectory.t_end} us but the sequence "
            f"needs {times[-1]} us"
        )
    cam = _Camera(sensor, scene.pitch)
    poses = [trajectory.pose_at(t) for t in times]

    def work(k):
        return _render_frame(scene, cam, poses[k][0], poses[k][1], times[k])

    if threads > 1:
        with _futures.ThreadPoolExecutor(max_workers=threads) as ex:
            rendered = list(ex.map(work, range(n)))
    else:
        rendered = [work(k) for k in range(n)]

    samples = []
    for k, (img, layers, hit) in enumerate(rendered):
        flow = None
        if k + 1 < n:
            flow = _flow_between(scene, cam, layers, hit, times[k], times[k + 1],
                                 poses[k], poses[k + 1])
        samples.append(RenderedSample(GrayFrame(times[k], img), flow, layers))
    return samples


def warp_check(frame_k: GrayFrame, frame_k1: GrayFrame, flow: FlowField,
               layers_k: np.ndarray | None = None,
               layers_k1: np.ndarray | None = None) -> float:
    """Mean |frame_k1(x + flow(x)) - frame_k(x)| over valid pixels.

    Valid pixels land in bounds and, when layer maps are given, keep the
    same layer id at the warp target (occlusion exclusion).
    """
    if frame_k.image.shape != frame_k1.image.shape:
        raise ValueError("frames must share one shape")
    h, w = flow.shape
    gy, gx = np.mgrid[0:h, 0:w].astype(np.float64)
    tx = gx + flow.u
    ty = gy + flow.v
    valid = (tx >= 0) & (tx <= w - 1) & (ty >= 0) & (ty <= h - 1)
    if layers_k is not None and layers_k1 is not None:
        ix = np.clip(np.rint(tx).astype(int), 0, w - 1)
        iy = np.clip(np.rint(ty).astype(int), 0, h - 1)
        valid &= layers_k == layers_k1[iy, ix]
    if not valid.any():
        raise ValueError("no valid pixels to compare")
    warped = bilinear_sample(frame_k1.image.astype(np.float64), tx, ty)
    return float(np.mean(np.abs(warped[valid]
                                - frame_k.image.astype(np.float64)[valid])))


def compose_dataset(samples: list[RenderedSample], events: EventStream, path,
                    props=None) -> Container:
    """Write frames, their flow fields and the event stream to a container.

    Flow cadence must tile the frame timestamps exactly.
    """
    frames = [s.frame for s in samples]
    flows = [s.flow for s in samples if s.flow is not None]
    if len(flows) != max(len(frames) - 1, 0):
        raise ValueError("cadence mismatch: need one flow field per frame pair")
    for f, a, b in zip(flows, frames, frames[1:]):
        if (f.t0, f.t1) != (a.t, b.t):
            raise ValueError(
                f"cadence mismatch: flow [{f.t0}, {f.t1}) between frames "
                f"at {a.t} and {b.t}"
            )
    return write_container(events, frames, flows, path, props=props)


def preset_trajectory(name: str, duration: float, seed: int = 0,
                      altitude: float = 2.0, speed: float = 0.5,
                      sample_dt: float = 0.1):
    """Scripted camera paths: ``down-constant-altitude`` translates at a
    fixed height looking straight down; ``forward-varying-depth`` pitches
    45 degrees forward while the depth oscillates.

    Returns (CameraTrajectory, pitch radians).
    """
    rng = np.random.default_rng(seed)
    n = max(int(round(duration / sample_dt)) + 1, 2)
    times = (np.arange(n) * sample_dt * 1e6).astype(np.int64)
    heading = rng.uniform(0.0, 2.0 * np.pi)
    v = np.array([np.cos(heading), np.sin(heading), 0.0]) * min(speed, MAX_CAMERA_SPEED)
    base = np.array([0.0, 0.0, -altitude])
    if name == "down-constant-altitude":
        positions = base + v * (times[:, None] / 1e6)
        yaws = np.full(n, heading)
        return CameraTrajectory(times, positions, yaws), 0.0
    if name == "forward-varying-depth":
        positions = base + v * (times[:, None] / 1e6)
        positions[:, 2] += 0.2 * altitude * np.sin(times / 1e6 * 0.8)
        yaws = np.full(n, heading)
        return CameraTrajectory(times, positions, yaws), np.radians(45.0)
    raise ValueError(f"unknown trajectory preset {name!r}")

"""End-to-end dataset generation: scene -> school -> render -> events -> container.

A single flat configuration mapping (the properties-file format) fully
determines every output byte; all randomness flows from named seeds
recorded into the sidecar. Thread count never changes results.
"""

from __future__ import annotations

import dataclasses
import os

import numpy as np

from . import boids, render, scene as scenegen
from .camsim import simulate_events
from .stream import SensorConfig
from .store import Container

__all__ = ["default_config", "generate_dataset"]


def default_config() -> dict:
    """Desk-scale defaults; every key can be overridden via config file."""
    return {
        "pipeline.preset": "static",            # static | dynamic
        "trajectory.preset": "down-constant-altitude",
        "trajectory.altitude": 2.0,
        "trajectory.speed": 0.5,
        "render.duration": 2.0,                 # seconds
        "render.texel_size": 0.02,
        "render.texture_size": 512,
        "render.texture_smoothness": 2.0,
        "sensor.width": 128,
        "sensor.height": 128,
        "sensor.fov_deg": 70.0,
        "sensor.c_pos": 0.28,
        "sensor.c_neg": 0.28,
        "sensor.refractory_ns": 200,
        "sensor.frame_rate": 20.0,
        "sensor.compare_rate": 17.0,
        "scene.clusters": 3,
        "scene.per_cluster": 20,
        "scene.cluster_radius": 4.0,
        "scene.scale_min": 0.3,
        "scene.scale_max": 1.2,
        "scene.extent": 20.0,
        "scene.grid": 28,
        "scene.relief": 0.6,
        "school.n": 10,
        "school.spawn_center.x": 0.0,
        "school.spawn_center.y": 0.0,
        "school.spawn_center.z": -1.0,
        "school.goal.x": 4.0,
        "school.goal.y": 4.0,
        "school.goal.z": -1.0,
        "school.voxel_size": 0.4,
        "school.fish_half_size": 0.12,
        "seeds.scene": 1,
        "seeds.boids": 2,
        "seeds.texture": 3,
        "seeds.trajectory": 4,
        "seeds.noise": 5,
        "seeds.optimizer": 6,
        "noise.rate": 0.0,                      # events / pixel / second
    }


def _sensor_from(cfg: dict) -> SensorConfig:
    return SensorConfig(
        width=int(cfg["sensor.width"]),
        height=int(cfg["sensor.height"]),
        fov_deg=float(cfg["sensor.fov_deg"]),
        c_pos=float(cfg["sensor.c_pos"]),
        c_neg=float(cfg["sensor.c_neg"]),
        refractory_ns=int(cfg["sensor.refractory_ns"]),
        frame_rate=float(cfg["sensor.frame_rate"]),
        compare_rate=float(cfg["sensor.compare_rate"]),
    )


def _build_school(cfg: dict, placements, duration: float):
    voxmap = boids.build_voxel_map(placements, float(cfg["school.voxel_size"]))
    start = np.array([cfg["school.spawn_center.x"], cfg["school.spawn_center.y"],
                      cfg["school.spawn_center.z"]], dtype=np.float64)
    goal = np.array([cfg["school.goal.x"], cfg["school.goal.y"],
                     cfg["school.goal.z"]], dtype=np.float64)
    path = boids.plan_leader_path(voxmap, start, goal, seed=int(cfg["seeds.boids"]))
    school_cfg = dataclasses.replace(boids.school_config_from_props(cfg),
                                     seed=int(cfg["seeds.boids"]),
                                     spawn_center=tuple(start))
    school = boids.School.spawn(school_cfg, path)
    n_steps = int(np.ceil(duration / school_cfg.dt)) + 1
    _, pos_hist, vel_hist = boids.run(school, n_steps, voxmap)
    times = (np.arange(n_steps + 1) * school_cfg.dt * 1e6).astype(np.int64)
    return times, pos_hist, vel_hist, voxmap, path


def generate_dataset(cfg: dict, out_dir, threads: int = 1) -> Container:
    """Run the full pipeline into ``out_dir``; returns the opened container.

    Writes ``sequence.evz`` plus sidecar, the scene file, and fish tracks
    for dynamic presets. Deterministic for a fixed config regardless of
    ``threads``.
    """
    full = default_config()
    full.update(cfg)
    cfg = full
    os.makedirs(out_dir, exist_ok=True)
    sensor = _sensor_from(cfg)
    duration = float(cfg["render.duration"])

    terrain = scenegen.make_terrain(int(cfg["seeds.scene"]),
                                    extent=float(cfg["scene.extent"]),
                                    n=int(cfg["scene.grid"]),
                                    relief=float(cfg["scene.relief"]))
    spec = scenegen.SceneSpec(
        seed=int(cfg["seeds.scene"]),
        clusters=int(cfg["scene.clusters"]),
        per_cluster=int(cfg["scene.per_cluster"]),
        cluster_radius=float(cfg["scene.cluster_radius"]),
        scale_range=(float(cfg["scene.scale_min"]), float(cfg["scene.scale_max"])),
    )
    placements = scenegen.sample_placements(terrain, spec)
    scenegen.write_scene(placements, os.path.join(out_dir, "scene.txt"), spec)

    fish = ()
    if cfg["pipeline.preset"] == "dynamic":
        times, pos_hist, vel_hist, _, _ = _build_school(cfg, placements, duration)
        boids.export_tracks(os.path.join(out_dir, "tracks.txt"),
                            times, pos_hist, vel_hist)
        fish = render.fish_tracks_from_boids(
            times, pos_hist, seed=int(cfg["seeds.boids"]),
            half_size=float(cfg["school.fish_half_size"]))
    elif cfg["pipeline.preset"] != "static":
        raise ValueError(f"unknown pipeline preset {cfg['pipeline.preset']!r}")

    trajectory, pitch = render.preset_trajectory(
        str(cfg["trajectory.preset"]), duration,
        seed=int(cfg["seeds.trajectory"]),
        altitude=float(cfg["trajectory.altitude"]),
        speed=float(cfg["trajectory.speed"]),
    )
    scene = render.RenderScene(
        ground_texture=render.make_texture(int(cfg["seeds.texture"]),
                                           size=int(cfg["render.texture_size"]),
                                           smoothness=float(cfg["render.texture_smoothness"])),
        texel_size=float(cfg["render.texel_size"]),
        pitch=pitch,
        decals=render.decals_from_placements(placements, seed=int(cfg["seeds.texture"])),
        fish=fish,
    )

    samples = render.render_sequence(scene, trajectory, sensor, duration,
                                     sensor.frame_rate, threads=threads)
    compare_samples = render.render_sequence(scene, trajectory, sensor, duration,
                                             sensor.compare_rate, threads=threads)
    events = simulate_events([s.frame for s in compare_samples], sensor)
    if float(cfg["noise.rate"]) > 0:
        from .encode import augment_noise

        events = augment_noise(events, float(cfg["noise.rate"]),
                               seed=int(cfg["seeds.noise"]))

    props = dict(cfg)
    props["evkit.version"] = __import__("evkit").__version__
    return render.compose_dataset(samples, events,
                                  os.path.join(out_dir, "sequence.evz"),
                                  props=props)

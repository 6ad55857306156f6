"""Fish-school dynamics: weighted Boid rules, voxel-map obstacle
repulsion, dynamic repellers and an RRT leader path.

Per step, each fish feels a weighted sum of alignment, cohesion,
separation and leader attraction, plus the repulsion vector of the
occupied voxel containing it and distance-scaled pushes from dynamic
repellers. Velocity integrates explicit-Euler with a hard speed clamp;
updates read the previous state snapshot, so results are independent of
any per-boid parallelism. Everything is deterministic per seed.

Cohesion and leader attraction use unit-direction scaling (bounded force)
for stability at large separations. The leader (index 0) ignores flocking
and steers toward its next waypoint, advancing when within ``step_size``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .props import read_props
from .scene import Placement

__all__ = [
    "SchoolConfig",
    "School",
    "VoxelMap",
    "LeaderPath",
    "DynamicRepeller",
    "force_alignment",
    "force_cohesion",
    "force_separation",
    "force_leader",
    "step",
    "run",
    "build_voxel_map",
    "plan_leader_path",
    "school_config_from_props",
    "export_tracks",
    "load_tracks",
]


@dataclass(frozen=True)
class SchoolConfig:
    n: int = 12
    w_align: float = 1.0
    w_cohere: float = 1.0
    w_separate: float = 1.5
    w_leader: float = 1.2
    r_perception: float = 3.0
    r_separation: float = 0.8
    v_max: float = 1.2          # m/s
    dt: float = 1.0 / 50.0      # s
    spawn_center: tuple = (0.0, 0.0, 0.0)
    spawn_radius: float = 2.0
    seed: int = 0
    obstacle_strength: float = 3.0

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("school size must be >= 1")
        if min(self.w_align, self.w_cohere, self.w_separate, self.w_leader) < 0:
            raise ValueError("rule weights must be >= 0")
        if self.r_perception <= 0 or self.r_separation <= 0:
            raise ValueError("radii must be > 0")
        if self.dt <= 0 or self.v_max <= 0:
            raise ValueError("dt and v_max must be > 0")


def school_config_from_props(props: Mapping) -> SchoolConfig:
    """Build a config from flattened ``school.*`` keys of a properties file."""
    ref = SchoolConfig()
    kwargs = {}
    for name in ("n", "seed"):
        kwargs[name] = int(props.get(f"school.{name}", getattr(ref, name)))
    for name in ("w_align", "w_cohere", "w_separate", "w_leader", "r_perception",
                 "r_separation", "v_max", "dt", "spawn_radius", "obstacle_strength"):
        kwargs[name] = float(props.get(f"school.{name}", getattr(ref, name)))
    center = tuple(float(props.get(f"school.spawn_center.{ax}", c))
                   for ax, c in zip("xyz", ref.spawn_center))
    return SchoolConfig(spawn_center=center, **kwargs)


@dataclass(frozen=True)
class DynamicRepeller:
    position: np.ndarray
    r_repel: float
    strength: float = 2.0

    def __post_init__(self) -> None:
        if self.r_repel <= 0:
            raise ValueError("repulsion radius must be > 0")
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))


class VoxelMap:
    """Sparse occupancy grid; each occupied voxel stores a unit repulsion
    vector (outward surface normal approximation)."""

    def __init__(self, origin, voxel_size: float):
        if voxel_size <= 0:
            raise ValueError("voxel size must be > 0")
        self.origin = np.asarray(origin, dtype=np.float64)
        self.voxel_size = float(voxel_size)
        self._cells: dict[tuple, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._cells)

    def key_for(self, point) -> tuple:
        idx = np.floor((np.asarray(point, dtype=np.float64) - self.origin)
                       / self.voxel_size).astype(np.int64)
        return tuple(int(i) for i in idx)

    def set_cell(self, key: tuple, direction: np.ndarray) -> None:
        d = np.asarray(direction, dtype=np.float64)
        norm = np.linalg.norm(d)
        if abs(norm - 1.0) > 1e-6:
            raise ValueError("repulsion vectors must be unit length")
        self._cells[key] = d

    def occupied(self, point) -> bool:
        return self.key_for(point) in self._cells

    def repulsion_at(self, point) -> np.ndarray | None:
        return self._cells.get(self.key_for(point))

    def center_of(self, key: tuple) -> np.ndarray:
        return self.origin + (np.asarray(key, dtype=np.float64) + 0.5) * self.voxel_size

    def keys(self):
        return self._cells.keys()

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if not self._cells:
            return self.origin.copy(), self.origin.copy()
        keys = np.array(list(self._cells.keys()), dtype=np.float64)
        lo = self.origin + keys.min(axis=0) * self.voxel_size
        hi = self.origin + (keys.max(axis=0) + 1.0) * self.voxel_size
        return lo, hi


def build_voxel_map(placements: Sequence[Placement], voxel_size: float,
                    origin=(0.0, 0.0, 0.0), radius_scale: float = 0.5) -> VoxelMap:
    """Voxelize placements as bounding spheres of radius scale * radius_scale.

    A voxel is occupied when its cube intersects any sphere; its repulsion
    vector points radially out of the nearest (deepest) sphere.
    Zero-radius obstacles are skipped.
    """
    vm = VoxelMap(origin, voxel_size)
    best_depth: dict[tuple, float] = {}
    for p in placements:
        r = p.scale * radius_scale
        if r <= 0:
            continue
        center = p.position
        lo = np.floor((center - r - vm.origin) / voxel_size).astype(np.int64)
        hi = np.floor((center + r - vm.origin) / voxel_size).astype(np.int64)
        for i in range(lo[0], hi[0] + 1):
            for j in range(lo[1], hi[1] + 1):
                for k in range(lo[2], hi[2] + 1):
                    key = (int(i), int(j), int(k))
                    cube_lo = vm.origin + np.array(key) * voxel_size
                    nearest = np.clip(center, cube_lo, cube_lo + voxel_size)
                    dist = float(np.linalg.norm(nearest - center))
                    if dist > r:
                        continue
                    depth = r - dist
                    if depth <= best_depth.get(key, -1.0):
                        continue
                    radial = vm.center_of(key) - center
                    norm = float(np.linalg.norm(radial))
                    direction = radial / norm if norm > 1e-12 else np.array([0.0, 0.0, -1.0])
                    vm.set_cell(key, direction)
                    best_depth[key] = depth
    return vm


@dataclass
class LeaderPath:
    waypoints: np.ndarray       # (K, 3)
    target_index: int = 0

    def current_target(self) -> np.ndarray:
        i = min(self.target_index, len(self.waypoints) - 1)
        return self.waypoints[i]

    def advance_if_reached(self, position: np.ndarray, reach: float) -> None:
        while (self.target_index < len(self.waypoints) - 1
               and np.linalg.norm(self.current_target() - position) <= reach):
            self.target_index += 1


@dataclass
class School:
    config: SchoolConfig
    positions: np.ndarray       # (n, 3) NED
    velocities: np.ndarray      # (n, 3)
    leader_path: LeaderPath | None = None
    rng: np.random.Generator = field(default_factory=np.random.default_rng)

    @classmethod
    def spawn(cls, config: SchoolConfig, leader_path: LeaderPath | None = None) -> "School":
        rng = np.random.default_rng(config.seed)
        center = np.asarray(config.spawn_center, dtype=np.float64)
        pos = center + rng.uniform(-config.spawn_radius, config.spawn_radius,
                                   size=(config.n, 3))
        vel = rng.uniform(-0.2, 0.2, size=(config.n, 3)) * config.v_max
        if leader_path is not None:
            pos[0] = leader_path.waypoints[0]
        return cls(config, pos, vel, leader_path, rng)

    @property
    def n(self) -> int:
        return len(self.positions)


def _neighbor_mask(school: School, i: int, radius: float) -> np.ndarray:
    d = np.linalg.norm(school.positions - school.positions[i], axis=1)
    mask = d <= radius
    mask[i] = False
    return mask


def force_alignment(i: int, school: School) -> np.ndarray:
    """w_align * (mean neighbor velocity - own); zero without neighbors."""
    mask = _neighbor_mask(school, i, school.config.r_perception)
    if not mask.any():
        return np.zeros(3)
    return school.config.w_align * (school.velocities[mask].mean(axis=0)
                                    - school.velocities[i])


def force_cohesion(i: int, school: School) -> np.ndarray:
    """w_cohere * unit(neighbor centroid - own position); zero without
    neighbors or when already at the centroid."""
    mask = _neighbor_mask(school, i, school.config.r_perception)
    if not mask.any():
        return np.zeros(3)
    offset = school.positions[mask].mean(axis=0) - school.positions[i]
    norm = np.linalg.norm(offset)
    if norm < 1e-12:
        return np.zeros(3)
    return school.config.w_cohere * offset / norm


def force_separation(i: int, school: School) -> np.ndarray:
    """Push away from each neighbor inside r_separation with inverse-square
    magnitude: w * unit(p_i - p_j) / |p_i - p_j|^2."""
    cfg = school.config
    mask = _neighbor_mask(school, i, cfg.r_separation)
    total = np.zeros(3)
    for j in np.nonzero(mask)[0]:
        away = school.positions[i] - school.positions[j]
        d = float(np.linalg.norm(away))
        if d < 1e-12:
            u = school.rng.normal(size=3)  # coincident: seeded random direction
            away = u / np.linalg.norm(u)
            d = 1.0
        total += cfg.w_separate * away / d ** 3
    return total


def force_leader(i: int, school: School) -> np.ndarray:
    """w_leader * unit direction toward the leader (boid 0)."""
    if i == 0:
        return np.zeros(3)
    offset = school.positions[0] - school.positions[i]
    norm = np.linalg.norm(offset)
    if norm < 1e-12:
        return np.zeros(3)
    return school.config.w_leader * offset / norm


def total_force(i: int, school: School, voxmap: VoxelMap | None = None,
                repellers: Sequence[DynamicRepeller] = (),
                rule_scale: float = 1.0) -> np.ndarray:
    """Weighted rule sum plus obstacle and dynamic repulsion.

    ``rule_scale`` scales only the four Boid rules (linearity test hook).
    """
    cfg = school.config
    if i == 0 and school.leader_path is not None:
        target = school.leader_path.current_target()
        offset = target - school.positions[0]
        norm = np.linalg.norm(offset)
        force = (cfg.w_leader * offset / norm if norm > 1e-12 else np.zeros(3))
        force = force * rule_scale
    else:
        force = rule_scale * (force_alignment(i, school) + force_cohesion(i, school)
                              + force_separation(i, school) + force_leader(i, school))
    if voxmap is not None:
        direction = voxmap.repulsion_at(school.positions[i])
        if direction is not None:
            force = force + cfg.obstacle_strength * direction
    for rep in repellers:
        away = school.positions[i] - rep.position
        d = float(np.linalg.norm(away))
        if d < rep.r_repel:
            if d < 1e-12:
                u = school.rng.normal(size=3)
                away, d = u / np.linalg.norm(u), 1.0
            force = force + rep.strength * (1.0 - d / rep.r_repel) * away / d
    return force


def step(school: School, voxmap: VoxelMap | None = None,
         repellers: Sequence[DynamicRepeller] = (), dt: float | None = None,
         clamp: bool = True, rule_scale: float = 1.0) -> School:
    """One explicit-Euler step on a snapshot of the school state."""
    cfg = school.config
    dt = cfg.dt if dt is None else dt
    if dt <= 0:
        raise ValueError("dt must be > 0")
    forces = np.stack([total_force(i, school, voxmap, repellers, rule_scale)
                       for i in range(school.n)])
    vel = school.velocities + forces * dt
    if clamp:
        speed = np.linalg.norm(vel, axis=1, keepdims=True)
        over = speed > cfg.v_max
        vel = np.where(over, vel * (cfg.v_max / np.maximum(speed, 1e-300)), vel)
    pos = school.positions + vel * dt
    out = replace(school, positions=pos, velocities=vel)
    if out.leader_path is not None:
        out.leader_path.advance_if_reached(pos[0], reach_for(cfg))
    return out


def reach_for(cfg: SchoolConfig) -> float:
    """Waypoint-reached distance: one nominal step length."""
    return max(cfg.v_max * cfg.dt, 0.25)


def run(school: School, n_steps: int, voxmap: VoxelMap | None = None,
        repellers: Sequence[DynamicRepeller] = ()):
    """Advance n_steps; returns (final school, (n_steps+1, n, 3) positions,
    matching velocities) including the initial state."""
    pos_hist = [school.positions.copy()]
    vel_hist = [school.velocities.copy()]
    for _ in range(n_steps):
        school = step(school, voxmap, repellers)
        pos_hist.append(school.positions.copy())
        vel_hist.append(school.velocities.copy())
    return school, np.stack(pos_hist), np.stack(vel_hist)


# -- RRT leader planning ---------------------------------------------------

def segment_clear(voxmap: VoxelMap, a: np.ndarray, b: np.ndarray) -> bool:
    """Sample the segment at voxel_size/2 resolution against occupancy."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    length = float(np.linalg.norm(b - a))
    n = max(int(np.ceil(length / (voxmap.voxel_size / 2.0))), 1)
    for s in np.linspace(0.0, 1.0, n + 1):
        if voxmap.occupied(a + s * (b - a)):
            return False
    return True


def plan_leader_path(voxmap: VoxelMap, start, goal, seed: int = 0,
                     step_size: float = 1.0, max_iters: int = 2000,
                     goal_bias: float = 0.05,
                     bounds: tuple | None = None) -> LeaderPath:
    """Plain RRT from start to goal through free space, deterministic per seed.

    Sampling covers the voxel map's bounding box inflated to include start
    and goal (or explicit ``bounds``). Raises when no path is found within
    ``max_iters``.
    """
    start = np.asarray(start, dtype=np.float64)
    goal = np.asarray(goal, dtype=np.float64)
    if voxmap.occupied(start) or voxmap.occupied(goal):
        raise ValueError("start and goal must lie in free space")
    if np.array_equal(start, goal):
        return LeaderPath(np.stack([start]))
    if segment_clear(voxmap, start, goal):
        return LeaderPath(np.stack([start, goal]))

    if bounds is None:
        lo, hi = voxmap.bounds()
        lo = np.minimum(np.minimum(lo, start), goal) - 2.0 * step_size
        hi = np.maximum(np.maximum(hi, start), goal) + 2.0 * step_size
    else:
        lo = np.asarray(bounds[0], dtype=np.float64)
        hi = np.asarray(bounds[1], dtype=np.float64)

    rng = np.random.default_rng(seed)
    nodes = [start]
    parents = [-1]
    for _ in range(max_iters):
        sample = goal if rng.random() < goal_bias else rng.uniform(lo, hi)
        arr = np.stack(nodes)
        nearest = int(np.argmin(np.linalg.norm(arr - sample, axis=1)))
        direction = sample - nodes[nearest]
        norm = float(np.linalg.norm(direction))
        if norm < 1e-12:
            continue
        new = nodes[nearest] + direction / norm * min(step_size, norm)
        if not segment_clear(voxmap, nodes[nearest], new):
            continue
        nodes.append(new)
        parents.append(nearest)
        if (np.linalg.norm(new - goal) <= step_size
                and segment_clear(voxmap, new, goal)):
            waypoints = [goal, new]
            k = nearest
            while k != -1:
                waypoints.append(nodes[k])
                k = parents[k]
            return LeaderPath(np.stack(waypoints[::-1]))
    raise RuntimeError(f"RRT found no path within {max_iters} iterations")


# -- trajectory interchange --------------------------------------------------

def export_tracks(path, times_us: np.ndarray, positions: np.ndarray,
                  velocities: np.ndarray) -> None:
    """Time-stamped text records: ``t_us boid x y z vx vy vz`` per line."""
    n_steps, n, _ = positions.shape
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k in range(n_steps):
            for i in range(n):
                p = positions[k, i]
                v = velocities[k, i]
                fh.write(f"{int(times_us[k])} {i} "
                         f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r} "
                         f"{float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")


def load_tracks(path):
    """Inverse of :func:`export_tracks`: (times_us, positions, velocities)."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) != 8:
                raise ValueError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
            rows.append([float(c) for c in parts])
    if not rows:
        return np.zeros(0, np.int64), np.zeros((0, 0, 3)), np.zeros((0, 0, 3))
    arr = np.asarray(rows)
    times = np.unique(arr[:, 0].astype(np.int64))
    n = int(arr[:, 1].max()) + 1
    pos = np.zeros((len(times), n, 3))
    vel = np.zeros((len(times), n, 3))
    t_index = {t: k for k, t in enumerate(times)}
    for row in arr:
        k = t_index[int(row[0])]
        i = int(row[1])
        pos[k, i] = row[2:5]
        vel[k, i] = row[5:8]
    return times, pos, vel

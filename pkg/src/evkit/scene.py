"""Seeded procedural scene synthesis on a terrain mesh.

Object instances are placed by sampling mesh vertices in clusters,
aligning each model's local up-axis with the surface normal at the chosen
vertex (shortest-arc rotation plus a uniform random yaw about the
normal), and converting everything from ENU to the NED frame the rest of
the pipeline uses. A fixed seed reproduces the exact same scene, down to
the bytes of the scene file.

World conventions: ENU input (x east, y north, z up), NED output
(x north, y east, z down); model frames are NED-like, so a model standing
upright has local up (0, 0, -1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "TerrainMesh",
    "Placement",
    "SceneSpec",
    "enu_to_ned",
    "sample_placements",
    "write_scene",
    "load_scene",
    "load_mesh",
    "save_mesh",
    "make_terrain",
    "quat_multiply",
    "quat_rotate",
    "quat_from_axis_angle",
    "quat_shortest_arc",
]

MODEL_UP_NED = np.array([0.0, 0.0, -1.0])


# -- quaternions (w, x, y, z) -------------------------------------------

def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    u = np.array([x, y, z])
    return v + 2.0 * np.cross(u, np.cross(u, v) + w * v)


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = angle / 2.0
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def quat_shortest_arc(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Unit quaternion rotating unit vector a onto unit vector b."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    dot = float(np.dot(a, b))
    if dot < -1.0 + 1e-12:
        # antiparallel: 180 degrees about any axis perpendicular to a
        helper = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        axis = np.cross(a, helper)
        return quat_from_axis_angle(axis, np.pi)
    q = np.concatenate([[1.0 + dot], np.cross(a, b)])
    return q / np.linalg.norm(q)


def enu_to_ned(p) -> np.ndarray:
    """(E, N, U) -> (N, E, -U); an involution, works for points and vectors."""
    p = np.asarray(p, dtype=float)
    return np.stack([p[..., 1], p[..., 0], -p[..., 2]], axis=-1)


# -- mesh ----------------------------------------------------------------

@dataclass(frozen=True)
class TerrainMesh:
    """Triangle mesh in ENU with unit per-vertex normals."""

    vertices: np.ndarray  # (N, 3) meters
    faces: np.ndarray     # (M, 3) vertex indices
    normals: np.ndarray   # (N, 3) unit

    def __post_init__(self) -> None:
        v = np.ascontiguousarray(self.vertices, dtype=np.float64)
        f = np.ascontiguousarray(self.faces, dtype=np.int64)
        n = np.ascontiguousarray(self.normals, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 3 or v.shape[0] == 0:
            raise ValueError("vertices must be a non-empty (N, 3) array")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("face indices out of range")
        norms = np.linalg.norm(n, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("normals must be unit length within 1e-6")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "normals", n)

    @classmethod
    def from_geometry(cls, vertices, faces) -> "TerrainMesh":
        """Normals as area-weighted face-normal averages."""
        v = np.asarray(vertices, dtype=np.float64)
        f = np.asarray(faces, dtype=np.int64)
        normals = np.zeros_like(v)
        if f.size:
            e1 = v[f[:, 1]] - v[f[:, 0]]
            e2 = v[f[:, 2]] - v[f[:, 0]]
            face_n = np.cross(e1, e2)  # magnitude = 2 * area
            for col in range(3):
                np.add.at(normals, f[:, col], face_n)
        lengths = np.linalg.norm(normals, axis=1)
        fallback = lengths < 1e-12
        normals[fallback] = (0.0, 0.0, 1.0)
        lengths[fallback] = 1.0
        return cls(v, f, normals / lengths[:, None])


def load_mesh(path) -> TerrainMesh:
    """Minimal ASCII mesh: ``v x y z`` / ``f i j k`` (1-based) / optional ``vn``."""
    vertices, faces, normals = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag, rest = parts[0], parts[1:]
            try:
                if tag == "v":
                    vertices.append([float(c) for c in rest[:3]])
                elif tag == "vn":
                    normals.append([float(c) for c in rest[:3]])
                elif tag == "f":
                    faces.append([int(c.split("/")[0]) - 1 for c in rest[:3]])
            except (ValueError, IndexError) as e:
                raise ValueError(f"{path}:{lineno}: bad mesh record {raw!r}") from e
    if normals and len(normals) == len(vertices):
        n = np.asarray(normals, dtype=np.float64)
        n /= np.linalg.norm(n, axis=1)[:, None]
        return TerrainMesh(np.asarray(vertices), np.asarray(faces, dtype=np.int64), n)
    return TerrainMesh.from_geometry(vertices, faces if faces else np.zeros((0, 3), np.int64))


def save_mesh(mesh: TerrainMesh, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for v in mesh.vertices:
            fh.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for n in mesh.normals:
            fh.write(f"vn {float(n[0])!r} {float(n[1])!r} {float(n[2])!r}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def make_terrain(seed: int, extent: float = 20.0, n: int = 24,
                 relief: float = 0.8, depth: float = 0.0) -> TerrainMesh:
    """Seeded bumpy ground patch: an n x n grid over [-extent/2, extent/2]^2
    (ENU, z up) with smooth height variation of amplitude ``relief``."""
    rng = np.random.default_rng(seed)
    xs = np.linspace(-extent / 2, extent / 2, n)
    gx, gy = np.meshgrid(xs, xs)
    z = np.full((n, n), depth)
    for _ in range(4):
        fx, fy = rng.uniform(0.1, 0.45, 2)
        ph = rng.uniform(0, 2 * np.pi, 2)
        z = z + relief / 4 * np.sin(fx * gx + ph[0]) * np.cos(fy * gy + ph[1])
    vertices = np.stack([gx.ravel(), gy.ravel(), z.ravel()], axis=1)
    idx = np.arange(n * n).reshape(n, n)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, :-1].ravel()
    d = idx[1:, 1:].ravel()
    faces = np.concatenate([np.stack([a, b, c], 1), np.stack([b, d, c], 1)])
    return TerrainMesh.from_geometry(vertices, faces)


# -- placement sampling --------------------------------------------------

@dataclass(frozen=True)
class Placement:
    """A posed model instance in NED."""

    model_id: str
    position: np.ndarray   # (3,) meters NED
    rotation: np.ndarray   # (4,) unit quaternion (w, x, y, z), NED
    scale: float

    def __post_init__(self) -> None:
        q = np.asarray(self.rotation, dtype=np.float64)
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise ValueError("rotation must be a unit quaternion within 1e-9")
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))
        object.__setattr__(self, "rotation", q)


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    clusters: int = 3
    per_cluster: int = 20
    cluster_radius: float = 4.0
    scale_range: tuple = (0.3, 1.2)
    models: tuple = ("antler_coral", "dome_coral", "brain_coral")

    def __post_init__(self) -> None:
        if self.clusters < 1 or self.per_cluster < 1:
            raise ValueError("cluster counts must be >= 1")
        if self.cluster_radius <= 0:
            raise ValueError("cluster radius must be > 0")
        s0, s1 = self.scale_range
        if not 0 < s0 <= s1:
            raise ValueError("scale range must satisfy 0 < s_min <= s_max")
        if not self.models:
            raise ValueError("model catalogue must not be empty")


def sample_placements(mesh: TerrainMesh, spec: SceneSpec) -> list[Placement]:
    """Cluster centers uniform over vertices; members sampled without
    replacement from vertices within the cluster radius of each center.

    Positions are exactly mesh vertices (converted to NED); rotations map
    the model up-axis onto the vertex normal with uniform random yaw.
    """
    rng = np.random.default_rng(spec.seed)
    placements: list[Placement] = []
    centers = rng.choice(len(mesh.vertices), size=spec.clusters,
                         replace=len(mesh.vertices) < spec.clusters)
    for c_idx in centers:
        center = mesh.vertices[c_idx]
        dist = np.linalg.norm(mesh.vertices - center, axis=1)
        candidates = np.nonzero(dist <= spec.cluster_radius)[0]
        if len(candidates) < spec.per_cluster:
            raise ValueError(
                f"cluster at vertex {c_idx}: only {len(candidates)} vertices within "
                f"radius {spec.cluster_radius}, need {spec.per_cluster}"
            )
        chosen = rng.choice(candidates, size=spec.per_cluster, replace=False)
        for v_idx in chosen:
            normal_ned = enu_to_ned(mesh.normals[v_idx])
            align = quat_shortest_arc(MODEL_UP_NED, normal_ned)
            yaw = rng.uniform(0.0, 2.0 * np.pi)
            rotation = quat_multiply(quat_from_axis_angle(normal_ned, yaw), align)
            rotation /= np.linalg.norm(rotation)
            placements.append(Placement(
                model_id=str(rng.choice(spec.models)),
                position=enu_to_ned(mesh.vertices[v_idx]),
                rotation=rotation,
                scale=float(rng.uniform(*spec.scale_range)),
            ))
    return placements


# -- scene file ----------------------------------------------------------

_SCENE_HEADER = "evscene 1"


def write_scene(placements, path, spec: SceneSpec | None = None) -> None:
    """Structured text scene file, byte-deterministic per seed.

    One record per placement: model id, NED position, quaternion
    (w, x, y, z), scale. Floats use shortest exact round-trip notation.
    """
    lines = [_SCENE_HEADER]
    if spec is not None:
        lines.append(f"spec seed={spec.seed} clusters={spec.clusters} "
                     f"per_cluster={spec.per_cluster} cluster_radius={spec.cluster_radius!r} "
                     f"scale={spec.scale_range[0]!r}:{spec.scale_range[1]!r}")
    lines.append(f"count {len(placements)}")
    for p in placements:
        pos = " ".join(repr(float(c)) for c in p.position)
        rot = " ".join(repr(float(c)) for c in p.rotation)
        lines.append(f"obj {p.model_id} {pos} {rot} {p.scale!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_scene(path) -> list[Placement]:
    placements: list[Placement] = []
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != _SCENE_HEADER:
        raise ValueError(f"{path}: not a scene file")
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts or parts[0] in ("spec", "count"):
            continue
        if parts[0] != "obj" or len(parts) != 10:
            raise ValueError(f"{path}:{lineno}: bad placement record {line!r}")
        placements.append(Placement(
            model_id=parts[1],
            position=np.array([float(c) for c in parts[2:5]]),
            rotation=np.array([float(c) for c in parts[5:9]]),
            scale=float(parts[9]),
        ))
    return placements

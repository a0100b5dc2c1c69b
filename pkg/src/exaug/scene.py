"""Synthetic scenes built from analytic primitives, rendered by raycasting.

World frame: +Z up, ground plane at z = 0. Boxes are axis-aligned, cylinders
are vertical. Shading is Lambertian under one fixed directional light, so
colors do not depend on the viewpoint.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from exaug.cloud import DepthMap, PointCloud, depth_to_cloud, transform_cloud
from exaug.errors import GenerationError, InvalidInputError
from exaug.geometry import CameraModel, Pose2D, Transform3D, compose, pixel_rays, range_to_depth_factor
from exaug.viewsynth import ColorImage

LIGHT_DIR = np.array([0.35, 0.25, 0.9]) / np.linalg.norm([0.35, 0.25, 0.9])
AMBIENT = 0.45
BACKGROUND = (150, 180, 215)
DEFAULT_MAX_RANGE = 20.0


@dataclass(frozen=True)
class Box:
    center: tuple[float, float, float]
    size: tuple[float, float, float]
    albedo: tuple[int, int, int] = (180, 90, 60)

    def __post_init__(self):
        if min(self.size) <= 0:
            raise InvalidInputError("box dimensions must be positive")

    def to_dict(self) -> dict:
        return {"type": "box", "center": list(self.center), "size": list(self.size),
                "albedo": list(self.albedo)}


@dataclass(frozen=True)
class Cylinder:
    """Vertical cylinder standing on ``z_min``."""

    center: tuple[float, float]
    radius: float
    z_min: float = 0.0
    z_max: float = 1.0
    albedo: tuple[int, int, int] = (70, 140, 90)

    def __post_init__(self):
        if self.radius <= 0 or self.z_max <= self.z_min:
            raise InvalidInputError("cylinder dimensions must be positive")

    def to_dict(self) -> dict:
        return {"type": "cylinder", "center": list(self.center), "radius": self.radius,
                "z_min": self.z_min, "z_max": self.z_max, "albedo": list(self.albedo)}


@dataclass(frozen=True)
class GroundPlane:
    albedo: tuple[int, int, int] = (120, 120, 110)

    def to_dict(self) -> dict:
        return {"type": "ground", "albedo": list(self.albedo)}


Primitive = Union[Box, Cylinder, GroundPlane]


def primitive_from_dict(d: dict) -> Primitive:
    kind = d["type"]
    albedo = tuple(int(c) for c in d.get("albedo", (128, 128, 128)))
    if kind == "box":
        return Box(tuple(d["center"]), tuple(d["size"]), albedo)
    if kind == "cylinder":
        return Cylinder(tuple(d["center"]), float(d["radius"]), float(d.get("z_min", 0.0)),
                        float(d.get("z_max", 1.0)), albedo)
    if kind == "ground":
        return GroundPlane(albedo)
    raise InvalidInputError(f"unknown primitive type {kind!r}")


@dataclass(frozen=True)
class SceneDescription:
    primitives: tuple = ()
    start: Pose2D = Pose2D()
    goal: Pose2D = Pose2D(1.0, 0.0, 0.0)
    subgoals: tuple = ()
    name: str = "scene"

    @property
    def obstacles(self) -> list:
        return [p for p in self.primitives if not isinstance(p, GroundPlane)]

    def route(self) -> list[Pose2D]:
        """Start, subgoals and goal in order."""
        return [self.start, *self.subgoals, self.goal]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "primitives": [p.to_dict() for p in self.primitives],
            "start": self.start.to_dict(),
            "goal": self.goal.to_dict(),
            "subgoals": [s.to_dict() for s in self.subgoals],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneDescription":
        return cls(
            tuple(primitive_from_dict(p) for p in d.get("primitives", [])),
            Pose2D.from_dict(d["start"]), Pose2D.from_dict(d["goal"]),
            tuple(Pose2D.from_dict(s) for s in d.get("subgoals", [])),
            d.get("name", "scene"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SceneDescription":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class RenderOutput:
    color: ColorImage
    depth: DepthMap


# -- ray/primitive intersection ------------------------------------------------
# Each routine takes origin (3,) and unit directions (N, 3) and returns the
# hit distance (inf on miss) and surface normals (N, 3).


def _hit_ground(o, d):
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(d[:, 2] < 0, -o[2] / d[:, 2], np.inf)
    t = np.where(t > 1e-9, t, np.inf)
    n = np.broadcast_to(np.array([0.0, 0.0, 1.0]), d.shape)
    return t, n


def _hit_box(box: Box, o, d):
    c = np.asarray(box.center, dtype=float)
    half = np.asarray(box.size, dtype=float) / 2
    lo, hi = c - half, c + half
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (lo - o) * inv
        t2 = (hi - o) * inv
    # rays parallel to a slab and outside it never hit
    parallel = d == 0
    outside = parallel & ((o < lo) | (o > hi))
    t1 = np.where(parallel, -np.inf, t1)
    t2 = np.where(parallel, np.inf, t2)
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    t_near = tmin.max(axis=1)
    t_far = tmax.min(axis=1)
    hit = (t_near <= t_far) & (t_far > 1e-9) & ~outside.any(axis=1)
    t = np.where(hit, np.where(t_near > 1e-9, t_near, t_far), np.inf)
    axis = tmin.argmax(axis=1)
    n = np.zeros_like(d)
    rows = np.arange(len(d))
    n[rows, axis] = -np.sign(d[rows, axis])
    return t, n


def _hit_cylinder(cyl: Cylinder, o, d):
    cx, cy = cyl.center
    ox, oy = o[0] - cx, o[1] - cy
    dx, dy, dz = d[:, 0], d[:, 1], d[:, 2]
    a = dx * dx + dy * dy
    b = 2 * (ox * dx + oy * dy)
    c = ox * ox + oy * oy - cyl.radius ** 2
    disc = b * b - 4 * a * c
    t_side = np.full(len(d), np.inf)
    ok = (a > 1e-15) & (disc >= 0)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = np.where(ok, (-b - sq) / (2 * a), np.inf)
        z0 = o[2] + t0 * dz
    side_ok = ok & (t0 > 1e-9) & (z0 >= cyl.z_min) & (z0 <= cyl.z_max)
    t_side = np.where(side_ok, t0, np.inf)

    t_cap = np.full(len(d), np.inf)
    for z_plane, facing in ((cyl.z_max, dz < 0), (cyl.z_min, dz > 0)):
        with np.errstate(divide="ignore", invalid="ignore"):
            tc = np.where(facing, (z_plane - o[2]) / dz, np.inf)
        px = ox + tc * dx
        py = oy + tc * dy
        inside = facing & (tc > 1e-9) & (px * px + py * py <= cyl.radius ** 2)
        t_cap = np.minimum(t_cap, np.where(inside, tc, np.inf))

    t = np.minimum(t_side, t_cap)
    n = np.zeros_like(d)
    side = t_side <= t_cap
    hx = ox + t * dx
    hy = oy + t * dy
    n[:, 0] = np.where(side, hx / cyl.radius, 0.0)
    n[:, 1] = np.where(side, hy / cyl.radius, 0.0)
    n[:, 2] = np.where(side, 0.0, np.where(dz < 0, 1.0, -1.0))
    n = np.where(np.isfinite(t)[:, None], n, 0.0)
    return t, n


def intersect(primitive: Primitive, origin, dirs):
    origin = np.asarray(origin, dtype=float)
    if isinstance(primitive, GroundPlane):
        return _hit_ground(origin, dirs)
    if isinstance(primitive, Box):
        return _hit_box(primitive, origin, dirs)
    return _hit_cylinder(primitive, origin, dirs)


def cast_rays(scene: SceneDescription, origin, dirs, max_range: float = DEFAULT_MAX_RANGE):
    """Nearest hit per ray: (distance, primitive index, normal); misses have inf / -1."""
    best_t = np.full(len(dirs), np.inf)
    best_i = np.full(len(dirs), -1)
    best_n = np.zeros_like(dirs)
    for i, prim in enumerate(scene.primitives):
        t, n = intersect(prim, origin, dirs)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_i = np.where(closer, i, best_i)
        best_n = np.where(closer[:, None], n, best_n)
    miss = best_t > max_range
    best_t[miss] = np.inf
    best_i[miss] = -1
    return best_t, best_i, best_n


def raycast(scene: SceneDescription, camera: CameraModel, camera_pose: Transform3D,
            max_range: float = DEFAULT_MAX_RANGE) -> RenderOutput:
    """Render color and depth; ``camera_pose`` maps camera coordinates to world."""
    if max_range <= 0:
        raise InvalidInputError("max_range must be positive")
    rays, in_fov = pixel_rays(camera)
    flat = rays.reshape(-1, 3)
    dirs = flat @ camera_pose.rotation.T
    t, idx, normal = cast_rays(scene, camera_pose.translation, dirs, max_range)
    hit = np.isfinite(t) & in_fov.ravel()

    albedo = np.array([p.albedo for p in scene.primitives] or [(0, 0, 0)], dtype=float)
    shade = AMBIENT + (1 - AMBIENT) * np.clip(normal @ LIGHT_DIR, 0.0, 1.0)
    rgb = albedo[np.where(hit, idx, 0)] * shade[:, None]
    rgb = np.where(hit[:, None], rgb, np.array(BACKGROUND, dtype=float))
    color = ColorImage(np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
                       .reshape(camera.height, camera.width, 3))

    depth_vals = np.where(hit, t * range_to_depth_factor(camera, flat), 0.0)
    depth = DepthMap(depth_vals.reshape(camera.height, camera.width),
                     hit.reshape(camera.height, camera.width))
    return RenderOutput(color, depth)


def camera_world_pose(robot_pose: Pose2D, mount: Transform3D) -> Transform3D:
    """Camera-to-world transform for a camera mounted on a robot at ``robot_pose``."""
    return compose(robot_pose.to_transform(), mount.inverse())


def render_at(scene: SceneDescription, robot_pose: Pose2D, camera: CameraModel,
              max_range: float = DEFAULT_MAX_RANGE) -> RenderOutput:
    return raycast(scene, camera, camera_world_pose(robot_pose, camera.mount), max_range)


def scene_cloud(scene: SceneDescription, robot_pose: Pose2D, camera: CameraModel,
                mount: Optional[Transform3D] = None,
                max_range: float = DEFAULT_MAX_RANGE) -> PointCloud:
    """Point cloud seen from ``robot_pose``, expressed in the robot frame."""
    mount = camera.mount if mount is None else mount
    out = raycast(scene, camera, camera_world_pose(robot_pose, mount), max_range)
    cloud = depth_to_cloud(camera, out.depth)
    return transform_cloud(cloud, mount.inverse(), frame="robot")


# -- clearance ---------------------------------------------------------------


def footprint_distance(primitive: Primitive, xy) -> np.ndarray:
    """Horizontal distance from points ``xy`` (..., 2) to an obstacle footprint."""
    xy = np.asarray(xy, dtype=float)
    if isinstance(primitive, Cylinder):
        c = np.asarray(primitive.center, dtype=float)
        return np.maximum(np.linalg.norm(xy - c, axis=-1) - primitive.radius, 0.0)
    if isinstance(primitive, Box):
        c = np.asarray(primitive.center[:2], dtype=float)
        half = np.asarray(primitive.size[:2], dtype=float) / 2
        q = np.maximum(np.abs(xy - c) - half, 0.0)
        return np.linalg.norm(q, axis=-1)
    return np.full(xy.shape[:-1], np.inf)


def _in_height(primitive: Primitive, top: float) -> bool:
    if isinstance(primitive, Box):
        return primitive.center[2] - primitive.size[2] / 2 < top
    if isinstance(primitive, Cylinder):
        return primitive.z_min < top
    return False


def clearance(scene: SceneDescription, xy, body_top: float = 2.0) -> np.ndarray:
    """Distance from robot centers ``xy`` to the nearest obstacle below ``body_top``."""
    xy = np.asarray(xy, dtype=float)
    best = np.full(xy.shape[:-1], np.inf)
    for prim in scene.obstacles:
        if _in_height(prim, body_top):
            best = np.minimum(best, footprint_distance(prim, xy))
    return best


# -- suite generation --------------------------------------------------------


@dataclass(frozen=True)
class SuiteParams:
    length_range: tuple[float, float] = (3.5, 5.0)
    subgoal_spacing: float = 1.0
    n_obstacles: tuple[int, int] = (1, 3)
    obstacle_radius: tuple[float, float] = (0.12, 0.3)
    lateral_offset: float = 0.6
    clearance: float = 0.6
    subgoal_keepout: float = 0.35
    obstacle_height: float = 1.0
    grid_step: float = 0.05
    margin: float = 1.5
    max_attempts: int = 200


def corridor_exists(scene: SceneDescription, radius: float, step: float = 0.05,
                    margin: float = 1.5) -> bool:
    """Grid search for a path of a disk of ``radius`` from start to goal."""
    route = np.array([[p.x, p.y] for p in scene.route()])
    lo = route.min(axis=0) - margin
    hi = route.max(axis=0) + margin
    xs = np.arange(lo[0], hi[0] + step / 2, step)
    ys = np.arange(lo[1], hi[1] + step / 2, step)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    free = clearance(scene, np.stack([gx, gy], axis=-1)) >= radius

    def cell(p: Pose2D):
        return int(round((p.x - lo[0]) / step)), int(round((p.y - lo[1]) / step))

    start, goal = cell(scene.start), cell(scene.goal)
    if not (free[start] and free[goal]):
        return False
    seen = np.zeros_like(free)
    seen[start] = True
    queue = deque([start])
    while queue:
        i, j = queue.popleft()
        if (i, j) == goal:
            return True
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            a, b = i + di, j + dj
            if 0 <= a < free.shape[0] and 0 <= b < free.shape[1] and free[a, b] and not seen[a, b]:
                seen[a, b] = True
                queue.append((a, b))
    return False


def straight_route(length: float, spacing: float) -> list[Pose2D]:
    n = max(1, int(round(length / spacing)))
    return [Pose2D(length * k / n, 0.0, 0.0) for k in range(1, n)]


def generate_scene(rng: np.random.Generator, params: SuiteParams, name: str = "scene"
                   ) -> SceneDescription:
    length = float(rng.uniform(*params.length_range))
    subgoals = tuple(straight_route(length, params.subgoal_spacing))
    base = SceneDescription((GroundPlane(),), Pose2D(), Pose2D(length, 0.0, 0.0), subgoals, name)
    n_lo, n_hi = params.n_obstacles
    for _ in range(params.max_attempts):
        count = int(rng.integers(n_lo, n_hi + 1)) if n_hi > 0 else 0
        obstacles = []
        for _ in range(count):
            r = float(rng.uniform(*params.obstacle_radius))
            x = float(rng.uniform(1.0, length - 0.6))
            y = float(rng.uniform(-params.lateral_offset, params.lateral_offset))
            if rng.random() < 0.5:
                obstacles.append(Cylinder((x, y), r, 0.0, params.obstacle_height,
                                          tuple(int(c) for c in rng.integers(40, 220, 3))))
            else:
                obstacles.append(Box((x, y, params.obstacle_height / 2),
                                     (2 * r, 2 * r, params.obstacle_height),
                                     tuple(int(c) for c in rng.integers(40, 220, 3))))
        scene = SceneDescription((GroundPlane(), *obstacles), base.start, base.goal,
                                 subgoals, name)
        route = np.array([[p.x, p.y] for p in scene.route()])
        if obstacles and clearance(scene, route).min() < params.subgoal_keepout:
            continue
        if corridor_exists(scene, params.clearance, params.grid_step, params.margin):
            return scene
    raise GenerationError(f"no certified corridor after {params.max_attempts} attempts")


def generate_suite(seed: int, count: int, params: SuiteParams = SuiteParams()
                   ) -> list[SceneDescription]:
    """Deterministic scene list; scene ``k`` depends only on ``(seed, k)``."""
    if count <= 0:
        raise InvalidInputError("count must be positive")
    scenes = []
    for k in range(count):
        rng = np.random.default_rng([seed, k])
        scenes.append(generate_scene(rng, params, name=f"scene_{seed}_{k:03d}"))
    return scenes


# -- named fixtures ------------------------------------------------------------


def narrow_gap_scene() -> SceneDescription:
    """Two posts leaving a 0.4 m gap on the straight line to a goal 3 m ahead.

    A small robot fits through the gap; a large one has to go around the
    thinner post.
    """
    posts = (
        Cylinder((1.5, 0.55), 0.3, 0.0, 1.0, (180, 70, 60)),
        Cylinder((1.5, -0.4), 0.15, 0.0, 1.0, (60, 90, 170)),
    )
    return SceneDescription((GroundPlane(), *posts), Pose2D(), Pose2D(3.0, 0.0, 0.0),
                            (Pose2D(1.0, 0.0, 0.0), Pose2D(2.0, 0.0, 0.0)), "narrow_gap")


def blocked_start_scene(half_size: float = 0.19) -> SceneDescription:
    """A closed square room barely larger than the robot body.

    Every reachable first waypoint lies within 0.2 m of a wall, so a
    forward-only robot can only turn in place.
    """
    t, h = 0.05, 1.0
    walls = (
        Box((half_size + t / 2, 0.0, h / 2), (t, 2 * half_size + 2 * t, h)),
        Box((-half_size - t / 2, 0.0, h / 2), (t, 2 * half_size + 2 * t, h)),
        Box((0.0, half_size + t / 2, h / 2), (2 * half_size, t, h)),
        Box((0.0, -half_size - t / 2, h / 2), (2 * half_size, t, h)),
    )
    return SceneDescription((GroundPlane(), *walls), Pose2D(), Pose2D(2.0, 0.0, 0.0),
                            (Pose2D(1.0, 0.0, 0.0),), "blocked_start")


FIXTURES = {"narrow-gap": narrow_gap_scene, "blocked-start": blocked_start_scene}

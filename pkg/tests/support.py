"""Reference implementations and fixtures shared by the test modules.

The oracles here are deliberately scalar and loop-based so that they share
no code path with the vectorized library routines they check.
"""

from __future__ import annotations

import math

import numpy as np

from exaug.cloud import DepthMap, depth_to_cloud, transform_cloud
from exaug.geometry import CameraModel, Pose2D, Transform3D, compose, mount_transform, project
from exaug.scene import Box, Cylinder, GroundPlane, SceneDescription
from exaug.viewsynth import ColorImage

# -- scenes ------------------------------------------------------------------


def synthesis_scene(variant: int = 0) -> SceneDescription:
    """Small indoor-like scenes with a back wall and a few obstacles."""
    rng = np.random.default_rng(1000 + variant)
    prims = [GroundPlane(), Box((6.0, 0.0, 1.5), (0.2, 12.0, 3.0), (200, 200, 190))]
    for _ in range(3):
        x = float(rng.uniform(2.0, 4.5))
        y = float(rng.uniform(-1.5, 1.5))
        col = tuple(int(c) for c in rng.integers(40, 230, 3))
        if rng.random() < 0.5:
            prims.append(Cylinder((x, y), float(rng.uniform(0.15, 0.4)), 0.0,
                                  float(rng.uniform(0.5, 1.5)), col))
        else:
            s = float(rng.uniform(0.3, 0.8))
            prims.append(Box((x, y, s / 2), (s, s, s), col))
    return SceneDescription(tuple(prims), name=f"synthesis_{variant}")


def spherical_source_camera() -> CameraModel:
    return CameraModel.equirectangular(416, 128, -math.pi / 2, math.pi / 2,
                                       -math.pi / 4, math.pi / 4,
                                       mount=mount_transform((0.0, 0.0, 0.5)))


def pinhole_target_camera() -> CameraModel:
    return CameraModel.pinhole(128, 128, 64.0, mount=mount_transform((0.2, 0.0, 0.3)))


def sensing_camera() -> CameraModel:
    """Forward hemisphere at 180x60, used to sense the narrow-gap fixture."""
    return CameraModel.equirectangular(180, 60, -math.pi / 2, math.pi / 2,
                                       -math.pi / 4, math.pi / 4,
                                       mount=mount_transform((0.0, 0.0, 0.4)))


def relative_camera_transform(src: CameraModel, dst: CameraModel,
                              rel: Pose2D = Pose2D()) -> Transform3D:
    """Source camera -> target camera for a target robot at ``rel`` in the source robot frame."""
    return compose(dst.mount, compose(rel.to_transform().inverse(), src.mount.inverse()))


# -- view synthesis oracles ---------------------------------------------------


def scalar_candidates(u: float, v: float):
    """The four (u, v, weight) candidates in buffer order, from scalar math."""
    cands = [(math.ceil(u), math.ceil(v)), (math.ceil(u), math.floor(v)),
             (math.floor(u), math.ceil(v)), (math.floor(u), math.floor(v))]
    lengths = [math.hypot(cu - u, cv - v) for cu, cv in cands]
    total = sum(lengths)
    if total == 0:
        return [(cu, cv, 1.0) for cu, cv in cands]
    return [(cu, cv, (total - lk) / total) for (cu, cv), lk in zip(cands, lengths)]


def brute_force_synthesis(colors: np.ndarray, points: np.ndarray, valid: np.ndarray,
                          target: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """Painter's-order splat and merge by explicit loops.

    Points are visited from the farthest to the nearest; equal ranges keep
    raster order. Each visit overwrites its four candidate pixels in their
    own buffers. Returns the merged uint8 image and the filled mask.
    """
    h, w = target.height, target.width
    items = []
    for r in range(points.shape[0]):
        for c in range(points.shape[1]):
            if not valid[r, c]:
                continue
            p = points[r, c]
            uv = project(target, p)
            if uv is None:
                continue
            rng = math.sqrt(float(p[0]) ** 2 + float(p[1]) ** 2 + float(p[2]) ** 2)
            items.append((rng, r * points.shape[1] + c, uv, colors[r, c]))
    # farthest first; stable on raster index
    items.sort(key=lambda it: (-it[0], it[1]))
    buf_col = [[[None] * w for _ in range(h)] for _ in range(4)]
    buf_w = [[[0.0] * w for _ in range(h)] for _ in range(4)]
    for _, _, (u, v), col in items:
        for k, (cu, cv, wk) in enumerate(scalar_candidates(u, v)):
            buf_col[k][cv][cu] = col
            buf_w[k][cv][cu] = wk
    out = np.zeros((h, w, 3), dtype=np.uint8)
    filled = np.zeros((h, w), dtype=bool)
    for y in range(h):
        for x in range(w):
            norm = 0.0
            acc = [0.0, 0.0, 0.0]
            for k in range(4):
                if buf_col[k][y][x] is None:
                    continue
                norm += buf_w[k][y][x]
                for ch in range(3):
                    acc[ch] += buf_w[k][y][x] * float(buf_col[k][y][x][ch])
            if norm > 0:
                filled[y, x] = True
                out[y, x] = [min(255, max(0, int(np.rint(a / norm)))) for a in acc]
    return out, filled


def brute_force_fill(rgb: np.ndarray, filled: np.ndarray) -> np.ndarray:
    """Fill each blank pixel from the nearest filled pixel up, down, left and right."""
    h, w = filled.shape
    out = rgb.astype(float).copy()
    for y in range(h):
        for x in range(w):
            if filled[y, x]:
                continue
            found = []
            for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                yy, xx, steps = y + dy, x + dx, 1
                while 0 <= yy < h and 0 <= xx < w:
                    if filled[yy, xx]:
                        found.append((steps, rgb[yy, xx].astype(float)))
                        break
                    yy, xx, steps = yy + dy, xx + dx, steps + 1
            if not found:
                raise AssertionError("oracle only covers pixels with an axis neighbor")
            if len(found) == 1:
                out[y, x] = found[0][1]
                continue
            total = sum(s for s, _ in found)
            weights = [(total - s) / total for s, _ in found]
            out[y, x] = sum(wk * col for wk, (_, col) in zip(weights, found)) / sum(weights)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


# -- objective oracles -----------------------------------------------------------


def loop_rollout(commands, dt: float, substeps: int = 1) -> np.ndarray:
    """Unicycle integration by explicit loop; ``substeps`` > 1 refines each interval."""
    x = y = th = 0.0
    out = []
    h = dt / substeps
    for v, w in commands:
        for _ in range(substeps):
            x += v * math.cos(th) * h
            y += v * math.sin(th) * h
            th += w * h
        out.append((x, y, th))
    return np.array(out)


def loop_j_geo(waypoints, xyz, weights, r_s: float, h_min: float, h_max: float) -> float:
    """Collision cost with indicator, weight and count written out per (i, j) pair."""
    total = 0.0
    count = 0
    for wx, wy, _ in waypoints:
        for (px, py, pz), wj in zip(xyz, weights):
            d = math.sqrt((px - wx) ** 2 + (py - wy) ** 2)
            inside = 1 if (d < r_s and h_min <= pz <= h_max) else 0
            count += inside
            total += inside * wj * (r_s - d) ** 2
    return total / count if count else 0.0


def loop_sparsity(points: np.ndarray, valid: np.ndarray) -> np.ndarray:
    h, w = valid.shape
    out = np.zeros((h, w))
    for i in range(1, h - 1):
        for j in range(1, w - 1):
            nbrs = [(i, j), (i, j - 1), (i, j + 1), (i - 1, j), (i + 1, j)]
            if not all(valid[a, b] for a, b in nbrs):
                continue
            dh = math.dist(points[i, j - 1], points[i, j + 1])
            dv = math.dist(points[i - 1, j], points[i + 1, j])
            out[i, j] = dh * dv
    return out


def random_splat_instance(rng: np.random.Generator, size: int = 16):
    """Random source image, depth and rigid motion between two small pinhole cameras.

    Returns ``(image, cloud_in_target_frame, target_camera)``. About a
    quarter of the instances use the identity motion with depths drawn from
    a few levels, so that exact ties and on-pixel projections occur.
    """
    src = CameraModel.pinhole(size, size, float(rng.uniform(8.0, 16.0)))
    dst = CameraModel.pinhole(size, size, float(rng.uniform(8.0, 16.0)))
    if rng.random() < 0.25:
        depth = rng.choice([1.0, 2.0, 3.0], size=(size, size))
        motion = Transform3D.identity()
        dst = src
    else:
        depth = rng.uniform(1.0, 5.0, size=(size, size))
        a = float(rng.uniform(-0.3, 0.3))
        # pan about the camera's vertical (y) axis
        rot = np.array([[math.cos(a), 0.0, math.sin(a)], [0.0, 1.0, 0.0],
                        [-math.sin(a), 0.0, math.cos(a)]])
        motion = Transform3D(rot, rng.uniform(-0.6, 0.6, size=3))
    depth[rng.random((size, size)) < 0.1] = 0.0
    image = ColorImage(rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8))
    cloud = transform_cloud(depth_to_cloud(src, DepthMap.from_array(depth)), motion)
    return image, cloud, dst

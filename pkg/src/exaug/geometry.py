"""Rigid transforms, planar poses and parametric camera models.

Frame conventions
-----------------
Robot frame: +X forward, +Y left, +Z up, origin on the ground below the
robot center.

Camera frame: +Z along the optical axis, +X right, +Y down (OpenCV).

Pixel coordinates are ``(u, v)`` = (column, row) with integer values at
pixel centers. Rasters are stored row-major as ``array[v, u]``.

Depth convention
----------------
``pinhole`` depth is the z-coordinate of the point in the camera frame.
``fisheye`` and ``equirectangular`` depth is the Euclidean range from the
camera center.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from exaug.errors import InvalidDepthError, InvalidInputError

PINHOLE = "pinhole"
FISHEYE = "fisheye-equidistant"
EQUIRECT = "equirectangular"
CAMERA_KINDS = (PINHOLE, FISHEYE, EQUIRECT)

# camera axes expressed in robot axes: cam X = -robot Y, cam Y = -robot Z, cam Z = robot X
ROBOT_TO_CAMERA_AXES = np.array(
    [[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]]
)

# snap tolerance for projections that land on an integer pixel
_SNAP = 1e-7


def wrap_angle(theta):
    """Map angles to (-pi, pi]. Works on scalars and arrays."""
    wrapped = np.mod(np.asarray(theta, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    wrapped = np.where(wrapped <= -np.pi, np.pi, wrapped)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class Pose2D:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        vals = (self.x, self.y, self.theta)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidInputError(f"non-finite pose {vals}")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def compose(self, other: "Pose2D") -> "Pose2D":
        """Pose of ``other`` (expressed in this pose's frame) in the parent frame."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2D(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )

    def inverse(self) -> "Pose2D":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2D(-c * self.x - s * self.y, s * self.x - c * self.y, -self.theta)

    def relative(self, other: "Pose2D") -> "Pose2D":
        """Express ``other`` in this pose's frame."""
        return self.inverse().compose(other)

    def to_transform(self) -> "Transform3D":
        return Transform3D.from_yaw(self.theta, (self.x, self.y, 0.0))

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "theta": self.theta}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose2D":
        return cls(d["x"], d["y"], d.get("theta", 0.0))


@dataclass(frozen=True, eq=False)
class Transform3D:
    """Rigid transform ``p -> R p + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise InvalidInputError("non-finite transform")
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise InvalidInputError("rotation is not a proper orthonormal matrix")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Transform3D":
        return cls()

    @classmethod
    def from_translation(cls, t) -> "Transform3D":
        return cls(np.eye(3), t)

    @classmethod
    def from_yaw(cls, yaw: float, t=(0.0, 0.0, 0.0)) -> "Transform3D":
        c, s = math.cos(yaw), math.sin(yaw)
        return cls(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]), t)

    @classmethod
    def from_matrix(cls, m) -> "Transform3D":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Transform3D":
        Rt = self.rotation.T
        return Transform3D(Rt, -Rt @ self.translation)

    def allclose(self, other: "Transform3D", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol, rtol=0)
            and np.allclose(self.translation, other.translation, atol=atol, rtol=0)
        )

    def to_dict(self) -> dict:
        return {
            "rotation": [float(v) for v in self.rotation.ravel()],
            "translation": [float(v) for v in self.translation],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Transform3D":
        return cls(np.reshape(d["rotation"], (3, 3)), d["translation"])


def compose(a: Transform3D, b: Transform3D) -> Transform3D:
    """Transform equivalent to applying ``b`` first, then ``a``."""
    return Transform3D(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def apply(t: Transform3D, p) -> np.ndarray:
    """Apply ``t`` to a point or to an array of points with trailing dimension 3."""
    p = np.asarray(p, dtype=float)
    return p @ t.rotation.T + t.translation


def mount_transform(position, yaw: float = 0.0, pitch: float = 0.0) -> Transform3D:
    """Robot-to-camera transform for a forward-looking camera.

    ``position`` is the camera center in the robot frame. ``yaw`` turns the
    camera left, ``pitch`` tilts it down; both in radians.
    """
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    yaw_m = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    pitch_m = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    # camera orientation in robot frame, in robot axes
    body = yaw_m @ pitch_m
    R = ROBOT_TO_CAMERA_AXES @ body.T
    c = np.asarray(position, dtype=float)
    return Transform3D(R, -R @ c)


@dataclass(frozen=True, eq=False)
class CameraModel:
    """A parametric camera: pinhole, equidistant fisheye or equirectangular.

    Fisheye cameras accept rays up to ``max_theta`` off axis. Equirectangular
    cameras cover azimuth ``[lon_min, lon_max]`` (positive to the right) and
    elevation ``[lat_min, lat_max]`` (positive up), mapped linearly onto the
    raster with pixel centers at half-pixel offsets.
    """

    kind: str
    width: int
    height: int
    fx: float = 1.0
    fy: float = 1.0
    cx: float = 0.0
    cy: float = 0.0
    max_theta: float = math.pi / 2
    lon_min: float = -math.pi
    lon_max: float = math.pi
    lat_min: float = -math.pi / 2
    lat_max: float = math.pi / 2
    mount: Transform3D = field(default_factory=Transform3D)

    def __post_init__(self):
        if self.kind not in CAMERA_KINDS:
            raise InvalidInputError(f"unknown camera kind {self.kind!r}")
        if self.width < 2 or self.height < 2:
            raise InvalidInputError("camera raster must be at least 2x2")
        if self.kind != EQUIRECT and not (self.fx > 0 and self.fy > 0):
            raise InvalidInputError("focal lengths must be positive")
        if self.kind == EQUIRECT and not (
            self.lon_max > self.lon_min and self.lat_max > self.lat_min
        ):
            raise InvalidInputError("empty equirectangular field of view")

    # -- constructors -----------------------------------------------------

    @classmethod
    def pinhole(cls, width, height, fx, fy=None, cx=None, cy=None, mount=None):
        return cls(
            PINHOLE, width, height, fx, fx if fy is None else fy,
            (width - 1) / 2 if cx is None else cx,
            (height - 1) / 2 if cy is None else cy,
            mount=mount or Transform3D(),
        )

    @classmethod
    def fisheye(cls, width, height, fx, fy=None, cx=None, cy=None,
                max_theta=math.pi / 2, mount=None):
        return cls(
            FISHEYE, width, height, fx, fx if fy is None else fy,
            (width - 1) / 2 if cx is None else cx,
            (height - 1) / 2 if cy is None else cy,
            max_theta=max_theta, mount=mount or Transform3D(),
        )

    @classmethod
    def equirectangular(cls, width, height, lon_min=-math.pi, lon_max=math.pi,
                        lat_min=-math.pi / 2, lat_max=math.pi / 2, mount=None):
        return cls(
            EQUIRECT, width, height, lon_min=lon_min, lon_max=lon_max,
            lat_min=lat_min, lat_max=lat_max, mount=mount or Transform3D(),
        )

    def scaled(self, width: int, height: int) -> "CameraModel":
        """Same field of view at a different raster size."""
        sx, sy = width / self.width, height / self.height
        return CameraModel(
            self.kind, width, height,
            self.fx * sx, self.fy * sy,
            (self.cx + 0.5) * sx - 0.5, (self.cy + 0.5) * sy - 0.5,
            self.max_theta, self.lon_min, self.lon_max, self.lat_min, self.lat_max,
            self.mount,
        )

    def with_mount(self, mount: Transform3D) -> "CameraModel":
        return CameraModel(
            self.kind, self.width, self.height, self.fx, self.fy, self.cx, self.cy,
            self.max_theta, self.lon_min, self.lon_max, self.lat_min, self.lat_max,
            mount,
        )

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind, "width": self.width, "height": self.height,
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
        }
        if self.kind == FISHEYE:
            d["max_theta"] = self.max_theta
        if self.kind == EQUIRECT:
            d.update(lon_min=self.lon_min, lon_max=self.lon_max,
                     lat_min=self.lat_min, lat_max=self.lat_max)
        d["mount"] = self.mount.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        extra = {k: float(d[k]) for k in
                 ("max_theta", "lon_min", "lon_max", "lat_min", "lat_max") if k in d}
        mount = Transform3D.from_dict(d["mount"]) if "mount" in d else Transform3D()
        return cls(
            d["kind"], int(d["width"]), int(d["height"]),
            float(d.get("fx", 1.0)), float(d.get("fy", 1.0)),
            float(d.get("cx", 0.0)), float(d.get("cy", 0.0)),
            mount=mount, **extra,
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "CameraModel":
        return cls.from_dict(json.loads(text))


# -- vectorized model maps ---------------------------------------------------


def pixel_grid(camera: CameraModel):
    """Integer pixel coordinate arrays ``(u, v)`` of shape (H, W)."""
    v, u = np.mgrid[0:camera.height, 0:camera.width]
    return u.astype(float), v.astype(float)


def rays_from_pixels(camera: CameraModel, u, v):
    """Unit viewing rays for continuous pixel coordinates.

    Returns ``(rays, valid)`` where ``rays`` has trailing dimension 3 and
    ``valid`` marks pixels inside the model's field of view.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if camera.kind == PINHOLE:
        x = (u - camera.cx) / camera.fx
        y = (v - camera.cy) / camera.fy
        rays = np.stack([x, y, np.ones_like(x)], axis=-1)
        rays /= np.linalg.norm(rays, axis=-1, keepdims=True)
        valid = np.ones(u.shape, dtype=bool)
    elif camera.kind == FISHEYE:
        dx = (u - camera.cx) / camera.fx
        dy = (v - camera.cy) / camera.fy
        theta = np.hypot(dx, dy)
        phi = np.arctan2(dy, dx)
        st = np.sin(theta)
        rays = np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)
        valid = theta <= camera.max_theta
    else:
        lon = camera.lon_min + (u + 0.5) / camera.width * (camera.lon_max - camera.lon_min)
        lat = camera.lat_max - (v + 0.5) / camera.height * (camera.lat_max - camera.lat_min)
        cl = np.cos(lat)
        rays = np.stack([cl * np.sin(lon), -np.sin(lat), cl * np.cos(lon)], axis=-1)
        valid = np.ones(u.shape, dtype=bool)
    return rays, valid


def pixel_rays(camera: CameraModel):
    """Unit rays and field-of-view mask for every pixel center, shape (H, W, 3)."""
    u, v = pixel_grid(camera)
    return rays_from_pixels(camera, u, v)


def range_to_depth_factor(camera: CameraModel, rays: np.ndarray) -> np.ndarray:
    """Factor converting Euclidean range along ``rays`` to the camera's depth value."""
    if camera.kind == PINHOLE:
        return rays[..., 2]
    return np.ones(rays.shape[:-1])


def project_points(camera: CameraModel, points) -> tuple[np.ndarray, np.ndarray]:
    """Project camera-frame points to continuous pixel coordinates.

    Returns ``(uv, ok)``; ``uv`` has trailing dimension 2 and is NaN where
    ``ok`` is False (behind a pinhole camera, outside the angular field of
    view, or outside the raster rectangle ``[0, W-1] x [0, H-1]``).
    """
    p = np.asarray(points, dtype=float)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    finite = np.isfinite(p).all(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        if camera.kind == PINHOLE:
            ok = finite & (z > 0)
            u = camera.fx * x / z + camera.cx
            v = camera.fy * y / z + camera.cy
        elif camera.kind == FISHEYE:
            rxy = np.hypot(x, y)
            theta = np.arctan2(rxy, z)
            ok = finite & (theta <= camera.max_theta) & (np.hypot(rxy, z) > 0)
            scale = np.where(rxy > 0, theta / np.where(rxy > 0, rxy, 1.0), 0.0)
            u = camera.cx + camera.fx * scale * x
            v = camera.cy + camera.fy * scale * y
        else:
            lon = np.arctan2(x, z)
            lat = np.arctan2(-y, np.hypot(x, z))
            ok = finite & (np.linalg.norm(p, axis=-1) > 0)
            ok &= (lon >= camera.lon_min) & (lon <= camera.lon_max)
            ok &= (lat >= camera.lat_min) & (lat <= camera.lat_max)
            u = (lon - camera.lon_min) / (camera.lon_max - camera.lon_min) * camera.width - 0.5
            v = (camera.lat_max - lat) / (camera.lat_max - camera.lat_min) * camera.height - 0.5
    uv = np.stack([u, v], axis=-1)
    # land exactly on integer pixels when within round-off
    snapped = np.round(uv)
    uv = np.where(np.abs(uv - snapped) < _SNAP, snapped, uv)
    ok &= (uv[..., 0] >= 0) & (uv[..., 0] <= camera.width - 1)
    ok &= (uv[..., 1] >= 0) & (uv[..., 1] <= camera.height - 1)
    uv = np.where(ok[..., None], uv, np.nan)
    return uv, ok


def project(camera: CameraModel, point) -> Optional[tuple[float, float]]:
    """Continuous pixel ``(u, v)`` of a camera-frame point, or None if not visible."""
    p = np.asarray(point, dtype=float).reshape(3)
    if not np.all(np.isfinite(p)):
        raise InvalidInputError(f"non-finite point {p}")
    uv, ok = project_points(camera, p)
    if not ok:
        return None
    return float(uv[0]), float(uv[1])


def back_project(camera: CameraModel, pixel, depth: float) -> np.ndarray:
    """Camera-frame point seen at integer ``pixel = (u, v)`` with the given depth."""
    u, v = pixel
    if not (0 <= u < camera.width and 0 <= v < camera.height):
        raise InvalidInputError(f"pixel {pixel} outside {camera.width}x{camera.height} raster")
    if not (math.isfinite(depth) and depth > 0):
        raise InvalidDepthError(f"depth must be positive and finite, got {depth}")
    ray, _ = rays_from_pixels(camera, float(u), float(v))
    return ray * (depth / range_to_depth_factor(camera, ray))

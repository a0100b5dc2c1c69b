"""Depth rasters, raster-organized point clouds and the per-pixel terms of the
collision cost (height band mask and sparsity weights)."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from exaug.errors import FormatError, InvalidBandError, ShapeError
from exaug.geometry import (
    CameraModel, Transform3D, apply, pixel_rays, range_to_depth_factor,
)

EXDM_MAGIC = b"EXDM"
DEFAULT_H_MIN = 0.2
DEFAULT_H_MAX = 0.65


@dataclass(frozen=True, eq=False)
class DepthMap:
    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        valid = np.asarray(self.valid, dtype=bool)
        if values.ndim != 2 or values.shape != valid.shape:
            raise ShapeError(f"depth {values.shape} and mask {valid.shape} disagree")
        valid = valid & np.isfinite(values) & (values > 0)
        values = np.where(valid, values, 0.0)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def from_array(cls, values) -> "DepthMap":
        """Wrap a raster; non-positive or non-finite entries become invalid."""
        values = np.asarray(values, dtype=float)
        return cls(values, np.isfinite(values) & (values > 0))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def write_exdm(path, depth: DepthMap) -> None:
    data = np.where(depth.valid, depth.values, 0.0).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(EXDM_MAGIC)
        fh.write(struct.pack("<II", depth.width, depth.height))
        fh.write(data.tobytes(order="C"))


def read_exdm(path) -> DepthMap:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != EXDM_MAGIC:
        raise FormatError(f"{path}: not an EXDM depth file")
    width, height = struct.unpack("<II", raw[4:12])
    expected = 12 + 4 * width * height
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    values = np.frombuffer(raw, dtype="<f4", offset=12).reshape(height, width)
    return DepthMap.from_array(values.astype(float))


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Per-pixel 3D points; invalid pixels hold NaN."""

    points: np.ndarray
    valid: np.ndarray
    frame: str = "camera"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        valid = np.asarray(self.valid, dtype=bool)
        if pts.ndim != 3 or pts.shape[2] != 3 or pts.shape[:2] != valid.shape:
            raise ShapeError(f"points {pts.shape} and mask {valid.shape} disagree")
        pts = np.where(valid[..., None], pts, np.nan)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape

    def valid_points(self) -> np.ndarray:
        return self.points[self.valid]


def depth_to_cloud(camera: CameraModel, depth: DepthMap) -> PointCloud:
    if (depth.height, depth.width) != (camera.height, camera.width):
        raise ShapeError(
            f"depth {depth.width}x{depth.height} does not match camera "
            f"{camera.width}x{camera.height}"
        )
    rays, in_fov = pixel_rays(camera)
    valid = depth.valid & in_fov
    rng = depth.values / range_to_depth_factor(camera, rays)
    return PointCloud(rays * rng[..., None], valid, frame="camera")


def transform_cloud(cloud: PointCloud, t: Transform3D, frame: str | None = None) -> PointCloud:
    pts = apply(t, np.nan_to_num(cloud.points))
    return PointCloud(pts, cloud.valid.copy(), frame or cloud.frame)


def height_mask(cloud: PointCloud, h_min: float = DEFAULT_H_MIN,
                h_max: float = DEFAULT_H_MAX) -> np.ndarray:
    """Pixels whose robot-frame height lies in the closed band [h_min, h_max]."""
    if not h_min < h_max:
        raise InvalidBandError(f"empty height band [{h_min}, {h_max}]")
    z = np.nan_to_num(cloud.points[..., 2], nan=-np.inf)
    return cloud.valid & (z >= h_min) & (z <= h_max)


def sparsity_weights(cloud: PointCloud) -> np.ndarray:
    """Approximate surface area each point stands for.

    The weight of pixel ``(v, u)`` is the 3D distance between its left and
    right neighbors times the distance between its upper and lower
    neighbors. Border pixels and pixels with an invalid 4-neighbor weigh 0.
    """
    pts, valid = cloud.points, cloud.valid
    h, w = valid.shape
    weights = np.zeros((h, w))
    if h < 3 or w < 3:
        return weights
    horiz = np.linalg.norm(pts[1:-1, 2:] - pts[1:-1, :-2], axis=-1)
    vert = np.linalg.norm(pts[2:, 1:-1] - pts[:-2, 1:-1], axis=-1)
    ok = (valid[1:-1, 1:-1] & valid[1:-1, 2:] & valid[1:-1, :-2]
          & valid[2:, 1:-1] & valid[:-2, 1:-1])
    weights[1:-1, 1:-1] = np.where(ok, horiz * vert, 0.0)
    return weights

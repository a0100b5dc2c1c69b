"""Trajectory rollout and the robot-conditioned trajectory cost.

The cost of a command sequence is

    J = J_pose + w_g * J_geo + w_d * J_diff + w_t * J_trav

where J_geo penalizes cloud points that fall inside a cylinder of radius
``r_s`` around any waypoint. Points are robot-frame arrays; the raster
structure is only needed to compute the sparsity weights beforehand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from exaug.cloud import DEFAULT_H_MAX, DEFAULT_H_MIN, PointCloud, height_mask, sparsity_weights
from exaug.errors import InvalidBandError, InvalidInputError, ShapeError
from exaug.geometry import Pose2D

DEFAULT_STEPS = 8
DEFAULT_DT = 0.33


@dataclass(frozen=True)
class RobotParams:
    r_s: float = 0.3
    r_s_prime: float = 0.2
    h_min: float = DEFAULT_H_MIN
    h_max: float = DEFAULT_H_MAX
    v_max: float = 1.0
    omega_max: float = 1.0

    def __post_init__(self):
        if self.r_s < 0 or self.r_s_prime < 0:
            raise InvalidInputError("radii must be non-negative")
        if not self.h_min < self.h_max:
            raise InvalidBandError(f"empty height band [{self.h_min}, {self.h_max}]")
        if self.v_max <= 0 or self.omega_max <= 0:
            raise InvalidInputError("velocity limits must be positive")


@dataclass(frozen=True)
class ObjectiveWeights:
    w_g: float = 5e3
    w_d: float = 0.025
    w_t: float = 0.25

    def __post_init__(self):
        if min(self.w_g, self.w_d, self.w_t) < 0:
            raise InvalidInputError("objective weights must be non-negative")


@dataclass(frozen=True, eq=False)
class Trajectory:
    commands: np.ndarray       # (N, 2) rows of (v, omega)
    waypoints: np.ndarray      # (N, 3) rows of (x, y, theta)
    traversability: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def poses(self) -> list[Pose2D]:
        return [Pose2D(*row) for row in self.waypoints]

    def csv_rows(self):
        trav = self.traversability
        for k, ((v, w), (x, y, th)) in enumerate(zip(self.commands, self.waypoints)):
            t = float(trav[k]) if k < len(trav) else float("nan")
            yield (k + 1, float(v), float(w), float(x), float(y), float(th), t)


@dataclass(frozen=True, eq=False)
class CollisionPoints:
    """Flat robot-frame points with their sparsity weights and band flags."""

    xyz: np.ndarray
    weight: np.ndarray
    in_band: np.ndarray

    @classmethod
    def empty(cls) -> "CollisionPoints":
        return cls(np.zeros((0, 3)), np.zeros(0), np.zeros(0, dtype=bool))

    @classmethod
    def from_cloud(cls, cloud: PointCloud, h_min: float = DEFAULT_H_MIN,
                   h_max: float = DEFAULT_H_MAX) -> "CollisionPoints":
        band = height_mask(cloud, h_min, h_max)
        weights = sparsity_weights(cloud)
        return cls(cloud.points[band], weights[band], np.ones(int(band.sum()), dtype=bool))

    @classmethod
    def from_arrays(cls, xyz, weight=None, params: Optional[RobotParams] = None):
        xyz = np.asarray(xyz, dtype=float).reshape(-1, 3)
        weight = np.ones(len(xyz)) if weight is None else np.asarray(weight, dtype=float)
        h_min = params.h_min if params else DEFAULT_H_MIN
        h_max = params.h_max if params else DEFAULT_H_MAX
        band = (xyz[:, 2] >= h_min) & (xyz[:, 2] <= h_max)
        return cls(xyz, weight, band)

    def banded(self) -> "CollisionPoints":
        m = self.in_band
        return CollisionPoints(self.xyz[m], self.weight[m], np.ones(int(m.sum()), dtype=bool))

    def within(self, radius: float) -> "CollisionPoints":
        """Band points whose horizontal distance from the origin is at most ``radius``."""
        m = self.in_band & (np.hypot(self.xyz[:, 0], self.xyz[:, 1]) <= radius)
        return CollisionPoints(self.xyz[m], self.weight[m], np.ones(int(m.sum()), dtype=bool))

    def __len__(self) -> int:
        return len(self.xyz)


def _as_points(cloud, params: RobotParams) -> CollisionPoints:
    if isinstance(cloud, CollisionPoints):
        return cloud
    if isinstance(cloud, PointCloud):
        return CollisionPoints.from_cloud(cloud, params.h_min, params.h_max)
    return CollisionPoints.from_arrays(cloud, params=params)


def rollout(commands, dt: float = DEFAULT_DT, start: Pose2D | None = None) -> np.ndarray:
    """Forward-Euler unicycle integration; position uses the pre-update heading.

    Returns an (N, 3) array of (x, y, theta) after each command.
    """
    cmds = np.asarray(commands, dtype=float).reshape(-1, 2)
    if not np.all(np.isfinite(cmds)):
        raise InvalidInputError("non-finite command")
    if dt <= 0:
        raise InvalidInputError("dt must be positive")
    start = start or Pose2D()
    v, w = cmds[:, 0], cmds[:, 1]
    heading = start.theta + np.cumsum(w) * dt
    before = np.concatenate([[start.theta], heading[:-1]])
    x = start.x + np.cumsum(v * np.cos(before) * dt)
    y = start.y + np.cumsum(v * np.sin(before) * dt)
    return np.stack([x, y, heading], axis=1)


def horizontal_distances(waypoints, xyz) -> np.ndarray:
    """(N_s, P) horizontal distance of each point in each waypoint frame."""
    wp = np.asarray(waypoints, dtype=float).reshape(-1, 3)
    diff = xyz[None, :, :2] - wp[:, None, :2]
    return np.hypot(diff[..., 0], diff[..., 1])


def geo_mask(waypoints, points: CollisionPoints, r_s: float) -> np.ndarray:
    """(N_s, P) indicator of band points strictly inside a waypoint's cylinder."""
    return (horizontal_distances(waypoints, points.xyz) < r_s) & points.in_band[None, :]


def j_geo(waypoints, cloud, params: RobotParams, mask: np.ndarray | None = None) -> float:
    """Mean weighted squared penetration of cloud points into the robot cylinder.

    ``mask`` overrides the inside/outside indicator (used to hold it fixed
    while differentiating).
    """
    pts = _as_points(cloud, params)
    if len(pts) == 0:
        return 0.0
    d = horizontal_distances(waypoints, pts.xyz)
    m = geo_mask(waypoints, pts, params.r_s) if mask is None else mask
    count = m.sum()
    if count == 0:
        return 0.0
    pen = np.where(m, pts.weight[None, :] * (params.r_s - d) ** 2, 0.0)
    return float(pen.sum() / count)


def j_pose(waypoints, goal: Pose2D) -> float:
    wp = np.asarray(waypoints, dtype=float).reshape(-1, 3)
    if len(wp) == 0:
        raise InvalidInputError("no waypoints")
    dx, dy = goal.x - wp[-1, 0], goal.y - wp[-1, 1]
    return float(dx * dx + dy * dy)


def j_diff(commands) -> float:
    cmds = np.asarray(commands, dtype=float).reshape(-1, 2)
    if len(cmds) < 2:
        return 0.0
    return float((np.diff(cmds, axis=0) ** 2).sum())


def j_trav(predicted, ground_truth) -> float:
    p = np.asarray(predicted, dtype=float).ravel()
    g = np.asarray(ground_truth, dtype=float).ravel()
    if p.shape != g.shape:
        raise ShapeError(f"traversability lengths differ: {p.size} vs {g.size}")
    return float(((g - p) ** 2).sum())


def traversability_gt(waypoints, cloud, params: RobotParams,
                      radius: float | None = None) -> np.ndarray:
    """1 where no band point lies strictly within ``radius`` (default r_s') of a waypoint."""
    radius = params.r_s_prime if radius is None else radius
    pts = _as_points(cloud, params)
    wp = np.asarray(waypoints, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return np.ones(len(wp))
    blocked = ((horizontal_distances(wp, pts.xyz) < radius) & pts.in_band[None, :]).any(axis=1)
    return np.where(blocked, 0.0, 1.0)


@dataclass(frozen=True)
class ObjectiveBreakdown:
    j_pose: float
    j_geo: float
    j_diff: float
    j_trav: float
    total: float

    def to_dict(self) -> dict:
        return {"j_pose": self.j_pose, "j_geo": self.j_geo, "j_diff": self.j_diff,
                "j_trav": self.j_trav, "total": self.total}


def total_objective(commands, goal: Pose2D, cloud, params: RobotParams,
                    weights: ObjectiveWeights = ObjectiveWeights(),
                    gt_trav=None, predicted_trav=None, dt: float = DEFAULT_DT,
                    mask: np.ndarray | None = None) -> ObjectiveBreakdown:
    """Weighted cost and its terms. The traversability term is 0 unless both
    traversability vectors are given."""
    wp = rollout(commands, dt)
    jp = j_pose(wp, goal)
    jg = j_geo(wp, cloud, params, mask=mask)
    jd = j_diff(commands)
    jt = 0.0
    if gt_trav is not None and predicted_trav is not None:
        jt = j_trav(predicted_trav, gt_trav)
    total = jp + weights.w_g * jg + weights.w_d * jd + weights.w_t * jt
    if not math.isfinite(total):
        raise InvalidInputError("objective is not finite")
    return ObjectiveBreakdown(jp, jg, jd, jt, total)

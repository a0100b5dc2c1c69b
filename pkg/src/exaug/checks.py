"""Self-checks shared by ``exaug selftest`` and the test-suite.

Two families: camera round-trips (pixel -> ray -> point -> pixel) and
analytic-versus-finite-difference gradients of the trajectory cost.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from exaug.geometry import CameraModel, Pose2D, back_project, project_points
from exaug.objective import CollisionPoints, ObjectiveWeights, RobotParams, rollout
from exaug.optimizer import TrajectoryProblem, gradient_check

ROUNDTRIP_TOL = 1e-6
GRADIENT_TOL = 1e-4


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    seconds: float

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name}: {self.value:.3e} (tol {self.tolerance:.0e}, {self.seconds:.2f}s)"


def reference_cameras() -> dict[str, CameraModel]:
    return {
        "pinhole": CameraModel.pinhole(160, 120, 110.0, 105.0, 79.2, 60.7),
        "fisheye": CameraModel.fisheye(200, 200, 60.0, max_theta=math.radians(100)),
        "equirect": CameraModel.equirectangular(256, 128),
    }


def random_pixels(camera: CameraModel, rng: np.random.Generator, n: int) -> np.ndarray:
    """Pixels inside the raster whose rays the model accepts."""
    out = []
    while sum(len(o) for o in out) < n:
        uv = rng.uniform([0.0, 0.0], [camera.width - 1, camera.height - 1], size=(n, 2))
        # keep only pixels whose ray projects back inside the field of view
        pts = np.array([back_project(camera, p, 1.0) for p in uv])
        _, ok = project_points(camera, pts)
        out.append(uv[ok])
    return np.concatenate(out)[:n]


def roundtrip_error(camera: CameraModel, rng: np.random.Generator, n: int = 1000) -> float:
    """Largest pixel error of project(back_project(p, depth)) over random pixels."""
    uv = random_pixels(camera, rng, n)
    depth = rng.uniform(0.2, 50.0, size=len(uv))
    pts = np.array([back_project(camera, p, d) for p, d in zip(uv, depth)])
    back, ok = project_points(camera, pts)
    if not ok.all():
        return math.inf
    return float(np.abs(back - uv).max())


def random_problem(rng: np.random.Generator, max_points: int = 2000) -> tuple:
    """A random cost instance with points scattered around a random rollout.

    Returns ``(problem, raw)`` where ``raw`` is a random parameter vector.
    """
    params = RobotParams(r_s=float(rng.uniform(0.1, 1.0)), r_s_prime=0.2,
                         v_max=float(rng.uniform(0.5, 2.0)),
                         omega_max=float(rng.uniform(0.3, 2.0)))
    n = int(rng.integers(50, max_points + 1))
    problem0 = TrajectoryProblem(Pose2D(), CollisionPoints.empty(), params)
    raw = rng.normal(0.0, 0.8, size=(problem0.n_steps, 2))
    path = rollout(problem0.commands(raw), problem0.dt)
    anchor = path[rng.integers(0, len(path), size=n), :2]
    xy = anchor + rng.normal(0.0, params.r_s, size=(n, 2))
    z = rng.uniform(0.0, 1.0, size=n)
    weight = rng.uniform(1e-3, 0.1, size=n)
    points = CollisionPoints.from_arrays(np.column_stack([xy, z]), weight, params)
    goal = Pose2D(*rng.uniform(-3.0, 3.0, size=2))
    problem = TrajectoryProblem(goal, points, params, ObjectiveWeights())
    return problem, raw


def run_roundtrip_checks(seed: int = 0, n: int = 1000) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, cam in reference_cameras().items():
        t0 = time.perf_counter()
        err = roundtrip_error(cam, rng, n)
        results.append(CheckResult(f"roundtrip/{name}", err < ROUNDTRIP_TOL, err,
                                   ROUNDTRIP_TOL, time.perf_counter() - t0))
    return results


def run_gradient_checks(seed: int = 0, count: int = 50) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(count):
        problem, raw = random_problem(rng)
        worst = max(worst, gradient_check(problem, raw))
    return [CheckResult(f"gradient/{count} instances", worst < GRADIENT_TOL, worst,
                        GRADIENT_TOL, time.perf_counter() - t0)]


def run_selftest(seed: int = 0, quick: bool = False) -> list[CheckResult]:
    n = 200 if quick else 1000
    count = 10 if quick else 50
    return run_roundtrip_checks(seed, n) + run_gradient_checks(seed, count)

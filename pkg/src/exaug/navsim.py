"""Closed-loop navigation over a topological graph of subgoal poses.

Each step runs three modules: localization against the next few graph
nodes, receding-horizon control by the trajectory optimizer toward the
next subgoal, and a safety check that replaces the linear velocity by zero
(pivot turn) whenever the first planned waypoint is not traversable.

Perception is replaced by ground truth: relative poses of graph nodes come
from the simulator, and the point cloud comes from raycasting the scene.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from exaug.errors import InvalidInputError, InvalidPathError, OptimizationFailure
from exaug.geometry import CameraModel, Pose2D, mount_transform
from exaug.objective import DEFAULT_DT, DEFAULT_STEPS, ObjectiveWeights, RobotParams, traversability_gt
from exaug.optimizer import (
    OptimizationResult, OptimizerConfig, TrajectoryProblem, optimize,
)
from exaug.scene import RenderOutput, SceneDescription, clearance, render_at, scene_cloud

TRACE_HEADER = ("step", "x", "y", "theta", "v", "omega", "n_c", "t1", "pivot_flag")


def default_nav_camera() -> CameraModel:
    """Forward hemisphere of a spherical camera at the robot center."""
    return CameraModel.equirectangular(
        120, 40, -math.pi / 2, math.pi / 2, -math.pi / 4, math.pi / 4,
        mount=mount_transform((0.0, 0.0, 0.4)),
    )


def default_nav_optimizer() -> OptimizerConfig:
    return OptimizerConfig(learning_rate=0.05, max_iters=120, restarts=3,
                           restart_scale=0.6, forward_only=True)


@dataclass(frozen=True)
class NavConfig:
    n_lookahead: int = 5
    d_l: float = 0.4
    theta_l: float = 0.5
    dt: float = DEFAULT_DT
    n_steps: int = DEFAULT_STEPS
    body_radius: float = 0.15
    body_top: float = 0.65
    max_steps: int = 500
    trav_threshold: float = 0.5
    seed: int = 0
    camera: CameraModel = field(default_factory=default_nav_camera)
    optimizer: OptimizerConfig = field(default_factory=default_nav_optimizer)
    weights: ObjectiveWeights = ObjectiveWeights()


@dataclass(frozen=True, eq=False)
class GraphNode:
    pose: Pose2D
    observation: Optional[RenderOutput] = None


@dataclass(frozen=True, eq=False)
class TopologicalGraph:
    nodes: tuple

    def __post_init__(self):
        if len(self.nodes) < 2:
            raise InvalidInputError("a topological graph needs at least two nodes")

    @property
    def goal_index(self) -> int:
        return len(self.nodes) - 1

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [(i, i + 1) for i in range(len(self.nodes) - 1)]

    def to_dict(self) -> dict:
        return {"nodes": [n.pose.to_dict() for n in self.nodes], "edges": self.edges}

    @classmethod
    def from_dict(cls, d: dict, scene: Optional[SceneDescription] = None,
                  camera: Optional[CameraModel] = None) -> "TopologicalGraph":
        poses = [Pose2D.from_dict(n) for n in d["nodes"]]
        return cls(tuple(
            GraphNode(p, render_at(scene, p, camera) if scene and camera else None)
            for p in poses
        ))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@dataclass(frozen=True)
class NavState:
    pose: Pose2D = Pose2D()
    n_c: int = 0
    step: int = 0
    collision: bool = False
    arrived: bool = False
    path_length: float = 0.0
    failed: bool = False


@dataclass(frozen=True)
class StepRecord:
    step: int
    x: float
    y: float
    theta: float
    v: float
    omega: float
    n_c: int
    t1: float
    pivot: bool

    def row(self) -> tuple:
        return (self.step, self.x, self.y, self.theta, self.v, self.omega,
                self.n_c, self.t1, int(self.pivot))


@dataclass(frozen=True)
class NavMetrics:
    task_completion: float
    goal_arrival: bool
    collision_free: bool
    path_length: float
    steps: int
    aborted: bool = False
    min_clearance: float = math.inf

    def to_dict(self) -> dict:
        return {
            "task_completion": self.task_completion,
            "goal_arrival": self.goal_arrival,
            "collision_free": self.collision_free,
            "path_length": self.path_length,
            "steps": self.steps,
            "aborted": self.aborted,
            "min_clearance": self.min_clearance if math.isfinite(self.min_clearance) else None,
        }


def teleop_path(scene: SceneDescription, spacing: float = 0.5) -> list[Pose2D]:
    """Poses every ``spacing`` meters along the start -> subgoals -> goal polyline."""
    route = scene.route()
    path = [route[0]]
    for a, b in zip(route[:-1], route[1:]):
        seg = math.hypot(b.x - a.x, b.y - a.y)
        heading = math.atan2(b.y - a.y, b.x - a.x) if seg > 0 else a.theta
        n = max(1, int(math.ceil(seg / spacing - 1e-9)))
        for k in range(1, n + 1):
            f = k / n
            path.append(Pose2D(a.x + f * (b.x - a.x), a.y + f * (b.y - a.y), heading))
    return path


def build_graph(scene: SceneDescription, path: list[Pose2D], camera: Optional[CameraModel],
                sample_period: int = 2) -> TopologicalGraph:
    """Sample every ``sample_period``-th pose of a driven path as a node; the
    final pose is always a node."""
    if len(path) < 2:
        raise InvalidPathError("teleoperation path needs at least two poses")
    if sample_period < 1:
        raise InvalidInputError("sample_period must be >= 1")
    idx = list(range(0, len(path), sample_period))
    if idx[-1] != len(path) - 1:
        idx.append(len(path) - 1)
    nodes = tuple(
        GraphNode(path[i], render_at(scene, path[i], camera) if camera is not None else None)
        for i in idx
    )
    return TopologicalGraph(nodes)


def relative_pose_oracle(robot: Pose2D, node: Pose2D) -> tuple[float, float, float]:
    """Node position in the robot frame and the heading change of the constant
    arc that reaches it over the horizon."""
    rel = robot.relative(node)
    dist = math.hypot(rel.x, rel.y)
    turn = 0.0 if dist < 1e-3 else 2.0 * math.atan2(rel.y, rel.x)
    return rel.x, rel.y, float(np.mod(turn + math.pi, 2 * math.pi) - math.pi)


def localize(state: NavState, graph: TopologicalGraph, n_lookahead: int = 5,
             d_l: float = 0.4, theta_l: float = 0.5,
             oracle: Callable = relative_pose_oracle) -> int:
    """Largest node index within the lookahead that the robot is close to."""
    n_c = state.n_c
    for n_l in range(1, n_lookahead + 1):
        n_g = state.n_c + n_l
        if n_g > graph.goal_index:
            break
        x, y, th = oracle(state.pose, graph.nodes[n_g].pose)
        if math.hypot(x, y) < d_l and abs(th) < theta_l:
            n_c = n_g
    return n_c


def plan(state: NavState, graph: TopologicalGraph, scene: SceneDescription,
         params: RobotParams, config: NavConfig) -> tuple[OptimizationResult, TrajectoryProblem]:
    """Optimize toward the node after the current one, in the robot frame."""
    target = graph.nodes[min(state.n_c + 1, graph.goal_index)].pose
    rel = state.pose.relative(target)
    cloud = scene_cloud(scene, state.pose, config.camera)
    problem = TrajectoryProblem.build(
        Pose2D(rel.x, rel.y, rel.theta), cloud, params, config.weights,
        config.dt, config.n_steps, forward_only=config.optimizer.forward_only,
    )
    opt_cfg = replace(config.optimizer, seed=config.seed * 100003 + state.step)
    return optimize(problem, opt_cfg), problem


def step(state: NavState, graph: TopologicalGraph, scene: SceneDescription,
         params: RobotParams, config: NavConfig = NavConfig()):
    """One localization + control + safety cycle. Returns (state, record)."""
    n_c = localize(state, graph, config.n_lookahead, config.d_l, config.theta_l)
    state = replace(state, n_c=n_c)
    if n_c == graph.goal_index:
        return replace(state, arrived=True), None

    result, problem = plan(state, graph, scene, params, config)
    traj = result.trajectory
    trav = traversability_gt(traj.waypoints, problem.points, params, params.r_s_prime)
    t1 = float(trav[0])
    v, w = (float(c) for c in traj.commands[0])
    pivot = not t1 > config.trav_threshold
    if pivot:
        v = 0.0

    p = state.pose
    moved = v * config.dt
    new_pose = Pose2D(p.x + moved * math.cos(p.theta), p.y + moved * math.sin(p.theta),
                      p.theta + w * config.dt)
    gap = float(clearance(scene, new_pose.xy, config.body_top))
    record = StepRecord(state.step, new_pose.x, new_pose.y, new_pose.theta, v, w, n_c, t1, pivot)
    state = replace(
        state, pose=new_pose, step=state.step + 1, path_length=state.path_length + abs(moved),
        collision=state.collision or gap < config.body_radius,
    )
    return state, record


def run_episode(scene: SceneDescription, graph: TopologicalGraph, params: RobotParams,
                config: NavConfig = NavConfig(), trace: Optional[list] = None) -> NavMetrics:
    """Loop until the final node is reached, a collision happens or the budget runs out."""
    state = NavState(pose=graph.nodes[0].pose)
    min_gap = float(clearance(scene, state.pose.xy, config.body_top))
    aborted = False
    while state.step < config.max_steps and not state.arrived and not state.collision:
        try:
            state, record = step(state, graph, scene, params, config)
        except OptimizationFailure:
            aborted = True
            break
        if record is not None:
            min_gap = min(min_gap, float(clearance(scene, state.pose.xy, config.body_top)))
            if trace is not None:
                trace.append(record)
    if not state.arrived and not state.collision and not aborted:
        # a final localization after the last executed command
        n_c = localize(state, graph, config.n_lookahead, config.d_l, config.theta_l)
        state = replace(state, n_c=n_c, arrived=n_c == graph.goal_index)
    return NavMetrics(
        task_completion=state.n_c / graph.goal_index,
        goal_arrival=state.arrived,
        collision_free=not state.collision,
        path_length=state.path_length,
        steps=state.step,
        aborted=aborted,
        min_clearance=min_gap,
    )


def graph_for_scene(scene: SceneDescription, camera: Optional[CameraModel] = None,
                    sample_period: int = 2, spacing: float = 0.5) -> TopologicalGraph:
    return build_graph(scene, teleop_path(scene, spacing), camera, sample_period)

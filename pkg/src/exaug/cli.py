"""Command-line entry point: ``exaug <subcommand> [flags]``.

Exit codes are 0 on success, 1 when navigation or optimization fails and 2
for usage or input errors. Every output file is written to a temporary
name and renamed into place.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import io
import itertools
import json
import logging
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from exaug import __version__
from exaug.checks import run_selftest
from exaug.cloud import read_exdm, write_exdm
from exaug.errors import (
    EmptySynthesisError, ExaugError, GenerationError, InvalidInputError, OptimizationFailure,
)
from exaug.geometry import CameraModel, Pose2D, Transform3D, compose
from exaug.navsim import (
    TRACE_HEADER, NavConfig, NavMetrics, TopologicalGraph, default_nav_camera, graph_for_scene,
    run_episode,
)
from exaug.objective import ObjectiveWeights, RobotParams
from exaug.optimizer import OptimizerConfig, TrajectoryProblem, optimize
from exaug.scene import (
    FIXTURES, SceneDescription, SuiteParams, clearance, generate_suite, render_at, scene_cloud,
)
from exaug.viewsynth import read_ppm, synthesize_view, write_ppm

log = logging.getLogger("exaug")

DEFAULT_SEED = 0
TRAJECTORY_HEADER = ("step", "v", "omega", "x", "y", "theta", "t")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad flags or unreadable inputs, reported with exit code 2."""


# -- output helpers ------------------------------------------------------------


@contextlib.contextmanager
def atomic_path(path):
    """Yield a temporary sibling of ``path`` and rename it into place on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.stem}.", suffix=path.suffix, dir=path.parent)
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_text(path, text: str) -> None:
    with atomic_path(path) as tmp:
        tmp.write_text(text)


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(c)) if isinstance(c, float) else c for c in row])
    return buf.getvalue()


def save_figure(fn, path, *args, **kwargs) -> None:
    from exaug import plotting

    with atomic_path(path) as tmp:
        getattr(plotting, fn)(tmp, *args, **kwargs)


def figure_path(args, data_path) -> Path | None:
    if args.no_figures or data_path is None:
        return None
    return Path(data_path).with_suffix(".png")


# -- input helpers -------------------------------------------------------------


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: not valid JSON ({exc})") from None


def load_scene(path) -> SceneDescription:
    try:
        return SceneDescription.from_dict(read_json(path))
    except (KeyError, TypeError) as exc:
        raise UsageError(f"{path}: malformed scene ({exc})") from None


def load_camera(path) -> CameraModel:
    try:
        return CameraModel.from_dict(read_json(path))
    except (KeyError, TypeError) as exc:
        raise UsageError(f"{path}: malformed camera ({exc})") from None


def parse_floats(text: str, lo: int, hi: int, what: str) -> list[float]:
    try:
        vals = [float(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError:
        raise UsageError(f"{what}: expected comma-separated numbers, got {text!r}") from None
    if not lo <= len(vals) <= hi or not all(math.isfinite(v) for v in vals):
        raise UsageError(f"{what}: expected {lo}-{hi} finite numbers, got {text!r}")
    return vals


def parse_pose2d(text: str, what: str = "pose") -> Pose2D:
    return Pose2D(*parse_floats(text, 2, 3, what))


def parse_relative_transform(text: str) -> Transform3D:
    """Target robot pose in the source robot frame.

    Accepts ``x,y,theta`` / ``x,y,z,yaw`` or a JSON file holding either a
    ``{"x", "y", "theta"}`` pose or a ``{"rotation", "translation"}`` transform.
    """
    if Path(text).suffix == ".json" or Path(text).is_file():
        d = read_json(text)
        if "rotation" in d:
            return Transform3D.from_dict(d)
        return Pose2D.from_dict(d).to_transform()
    vals = parse_floats(text, 3, 4, "--pose")
    if len(vals) == 3:
        return Pose2D(*vals).to_transform()
    x, y, z, yaw = vals
    return Transform3D.from_yaw(yaw, (x, y, z))


def resolve_threads(args) -> int:
    env = os.environ.get("EXAUG_THREADS")
    threads = args.threads
    if env:
        try:
            threads = int(env)
        except ValueError:
            raise UsageError(f"EXAUG_THREADS must be an integer, got {env!r}") from None
    if threads < 1:
        raise UsageError("thread count must be >= 1")
    return threads


# -- subcommands ---------------------------------------------------------------


def cmd_warp(args) -> int:
    src_img = read_ppm(args.src_image)
    src_depth = read_exdm(args.src_depth)
    src_cam = load_camera(args.src_cam)
    dst_cam = load_camera(args.dst_cam)
    rel = parse_relative_transform(args.pose)
    # source camera -> source robot -> target robot -> target camera
    t_st = compose(dst_cam.mount, compose(rel.inverse(), src_cam.mount.inverse()))
    image = synthesize_view(src_img, src_depth, src_cam, dst_cam, t_st, args.working_scale)
    with atomic_path(args.out) as tmp:
        write_ppm(tmp, image)
    fig = figure_path(args, args.out)
    if fig is not None:
        save_figure("plot_view_comparison", fig, {"source": src_img, "synthesized": image})
    log.info("wrote %s", args.out)
    return EXIT_OK


def robot_params(args) -> RobotParams:
    return RobotParams(r_s=args.rs, r_s_prime=args.rs_prime, v_max=args.v_max,
                       omega_max=args.omega_max)


def cmd_optimize(args) -> int:
    scene = load_scene(args.scene)
    camera = load_camera(args.cam) if args.cam else default_nav_camera()
    params = robot_params(args)
    goal_world = parse_pose2d(args.goal, "--goal") if args.goal else scene.goal
    goal = scene.start.relative(goal_world)
    cloud = scene_cloud(scene, scene.start, camera)
    problem = TrajectoryProblem.build(goal, cloud, params, ObjectiveWeights(),
                                      forward_only=args.forward_only)
    config = OptimizerConfig(learning_rate=args.lr, max_iters=args.iters,
                             restarts=args.restarts, restart_scale=args.restart_scale,
                             seed=args.seed, forward_only=args.forward_only,
                             radius_margin=args.radius_margin)
    try:
        result = optimize(problem, config)
    except OptimizationFailure as exc:
        write_text(args.report, dump_json({"status": "failed", "error": str(exc)}))
        print(f"optimization failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    traj = result.trajectory
    world = np.array([[p.x, p.y, p.theta]
                      for p in (scene.start.compose(q) for q in traj.poses)])
    gaps = clearance(scene, world[:, :2], params.h_max)
    report = {
        "status": "ok",
        "scene": scene.name,
        "goal": goal_world.to_dict(),
        "params": {"r_s": params.r_s, "r_s_prime": params.r_s_prime,
                   "v_max": params.v_max, "omega_max": params.omega_max},
        "seed": args.seed,
        "radius_margin": args.radius_margin,
        "result": result.to_dict(),
        "min_clearance": float(gaps.min()),
        "peak_abs_omega": float(np.abs(traj.commands[:, 1]).max()),
        "final_position": [float(world[-1, 0]), float(world[-1, 1])],
        "traversability": [float(t) for t in traj.traversability],
    }
    write_text(args.out, csv_text(TRAJECTORY_HEADER, traj.csv_rows()))
    write_text(args.report, dump_json(report))
    fig = figure_path(args, args.report)
    if fig is not None:
        save_figure("plot_trajectories", fig, scene, {f"r_s={params.r_s:g}": (world, params.r_s)},
                    goal=goal_world, title=scene.name)
    return EXIT_OK


def cmd_scene_generate(args) -> int:
    out = Path(args.out)
    if args.fixture:
        scenes = [FIXTURES[args.fixture]()]
    else:
        if args.count < 1:
            raise UsageError("--count must be >= 1")
        params = SuiteParams(n_obstacles=(0, 0)) if args.obstacle_free else SuiteParams()
        try:
            scenes = generate_suite(args.seed, args.count, params)
        except GenerationError as exc:
            print(f"scene generation failed: {exc}", file=sys.stderr)
            return EXIT_FAILURE
    names = []
    for k, scene in enumerate(scenes):
        stem = f"{k:03d}"
        write_text(out / f"scene_{stem}.json", scene.to_json() + "\n")
        write_text(out / f"graph_{stem}.json", graph_for_scene(scene).to_json() + "\n")
        names.append(scene.name)
    write_text(out / "suite.json", dump_json({"seed": args.seed, "scenes": names}))
    if not args.no_figures:
        for k, scene in enumerate(scenes):
            save_figure("plot_trajectories", out / f"scene_{k:03d}.png", scene, {},
                        goal=scene.goal, title=scene.name)
    log.info("wrote %d scenes to %s", len(scenes), out)
    return EXIT_OK


def cmd_scene_render(args) -> int:
    scene = load_scene(args.scene)
    camera = load_camera(args.cam) if args.cam else default_nav_camera()
    pose = parse_pose2d(args.pose) if args.pose else scene.start
    out = render_at(scene, pose, camera)
    with atomic_path(args.out_color) as tmp:
        write_ppm(tmp, out.color)
    if args.out_depth:
        with atomic_path(args.out_depth) as tmp:
            write_exdm(tmp, out.depth)
    return EXIT_OK


def nav_config(args, seed: int) -> NavConfig:
    return NavConfig(max_steps=args.max_steps, seed=seed)


def episode_record(scene: SceneDescription, params: RobotParams, seed: int,
                   metrics: NavMetrics) -> dict:
    return {
        "scene": scene.name,
        "params": {"r_s": params.r_s, "r_s_prime": params.r_s_prime,
                   "omega_max": params.omega_max, "v_max": params.v_max},
        "seed": seed,
        "metrics": metrics.to_dict(),
    }


def _run_case(case):
    scene, graph_dict, params, config, want_trace = case
    graph = TopologicalGraph.from_dict(graph_dict)
    trace = [] if want_trace else None
    metrics = run_episode(scene, graph, params, config, trace)
    return metrics, trace


def cmd_nav(args) -> int:
    scene = load_scene(args.scene)
    graph = (TopologicalGraph.from_dict(read_json(args.graph)) if args.graph
             else graph_for_scene(scene))
    params = robot_params(args)
    trace: list = []
    metrics = run_episode(scene, graph, params, nav_config(args, args.seed), trace)
    write_text(args.out, dump_json(episode_record(scene, params, args.seed, metrics)))
    if args.trace:
        write_text(args.trace, csv_text(TRACE_HEADER, (r.row() for r in trace)))
    fig = figure_path(args, args.out)
    if fig is not None:
        save_figure("plot_nav_trace", fig, scene, [n.pose for n in graph.nodes], trace,
                    title=scene.name)
    ok = metrics.goal_arrival and metrics.collision_free and not metrics.aborted
    return EXIT_OK if ok else EXIT_FAILURE


def load_suite(path) -> list[tuple[SceneDescription, dict]]:
    path = Path(path)
    if path.is_file():
        scene = load_scene(path)
        return [(scene, graph_for_scene(scene).to_dict())]
    if not path.is_dir():
        raise UsageError(f"no such suite: {path}")
    items = []
    for scene_file in sorted(path.glob("scene_*.json")):
        scene = load_scene(scene_file)
        graph_file = scene_file.with_name(scene_file.name.replace("scene_", "graph_", 1))
        graph = read_json(graph_file) if graph_file.exists() else graph_for_scene(scene).to_dict()
        items.append((scene, graph))
    if not items:
        raise UsageError(f"suite {path} holds no scene_*.json files")
    return items


def _grid(values, default):
    return [default] if values is None else list(values)


def grid_label(params: RobotParams) -> str:
    return f"rs={params.r_s:g},rs'={params.r_s_prime:g},omega={params.omega_max:g}"


def aggregate(records: list[dict]) -> dict:
    summary: dict = {}
    for rec in records:
        p = rec["params"]
        label = f"rs={p['r_s']:g},rs'={p['r_s_prime']:g},omega={p['omega_max']:g}"
        summary.setdefault(label, []).append(rec["metrics"])
    out = {}
    for label, ms in summary.items():
        gaps = [m["min_clearance"] for m in ms if m["min_clearance"] is not None]
        out[label] = {
            "episodes": len(ms),
            "task_completion": float(np.mean([m["task_completion"] for m in ms])),
            "goal_arrival": float(np.mean([m["goal_arrival"] for m in ms])),
            "collision_free": float(np.mean([m["collision_free"] for m in ms])),
            "aborted": int(sum(m["aborted"] for m in ms)),
            "mean_path_length": float(np.mean([m["path_length"] for m in ms])),
            "min_clearance": float(min(gaps)) if gaps else None,
            "mean_min_clearance": float(np.mean(gaps)) if gaps else None,
        }
    return out


def cmd_eval_suite(args) -> int:
    threads = resolve_threads(args)
    suite = load_suite(args.suite)
    grid = [
        RobotParams(r_s=rs, r_s_prime=rsp, omega_max=om, v_max=args.v_max)
        for rs, rsp, om in itertools.product(
            _grid(args.rs, 0.3), _grid(args.rs_prime, 0.2), _grid(args.omega_max, 1.0))
    ]
    config = nav_config(args, args.seed)
    want_trace = args.report_dir is not None
    cases = [(scene, graph, params, config, want_trace)
             for params in grid for scene, graph in suite]
    if threads > 1 and len(cases) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(_run_case, cases))
    else:
        outcomes = [_run_case(c) for c in cases]
    records = [episode_record(c[0], c[2], args.seed, m) for c, (m, _) in zip(cases, outcomes)]
    report = {"seed": args.seed, "episodes": records, "aggregate": aggregate(records)}
    write_text(args.out, dump_json(report))
    if want_trace:
        rdir = Path(args.report_dir)
        for k, (c, (m, trace)) in enumerate(zip(cases, outcomes)):
            stem = f"{k:03d}_{c[0].name}"
            write_text(rdir / f"{stem}.csv", csv_text(TRACE_HEADER, (r.row() for r in trace)))
            if not args.no_figures:
                poses = [Pose2D.from_dict(n) for n in c[1]["nodes"]]
                save_figure("plot_nav_trace", rdir / f"{stem}.png", c[0], poses, trace,
                            title=f"{c[0].name} {grid_label(c[2])}")
    fig = figure_path(args, args.out)
    if fig is not None and report["aggregate"]:
        save_figure("plot_suite_summary", fig, report["aggregate"])
    for label, agg in report["aggregate"].items():
        log.info("%s TC %.2f GA %.2f CF %.2f", label, agg["task_completion"],
                 agg["goal_arrival"], agg["collision_free"])
    return EXIT_OK


def cmd_selftest(args) -> int:
    results = run_selftest(args.seed, quick=args.quick)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILURE


# -- argument parsing ------------------------------------------------------------


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED,
                   help=f"random seed (default {DEFAULT_SEED})")
    p.add_argument("--threads", type=int, default=1,
                   help="worker processes for independent episodes (EXAUG_THREADS overrides)")
    p.add_argument("--no-figures", action="store_true", help="skip PNG figures")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def _robot(p: argparse.ArgumentParser, many: bool = False) -> None:
    if many:
        p.add_argument("--rs", type=float, nargs="*", help="robot radius grid (default 0.3)")
        p.add_argument("--rs-prime", type=float, nargs="*",
                       help="traversability radius grid (default 0.2)")
        p.add_argument("--omega-max", type=float, nargs="*",
                       help="turn-rate limit grid (default 1.0)")
    else:
        p.add_argument("--rs", type=float, default=0.3, help="robot radius [m]")
        p.add_argument("--rs-prime", type=float, default=0.2,
                       help="traversability radius [m]")
        p.add_argument("--omega-max", type=float, default=1.0, help="turn-rate limit [rad/s]")
    p.add_argument("--v-max", type=float, default=1.0, help="speed limit [m/s]")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(
        prog="exaug", description="View synthesis, trajectory optimization and navigation.")
    parser.add_argument("--version", action="version", version=f"exaug {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("warp", parents=[common], help="synthesize a view for another camera")
    p.add_argument("--src-image", required=True, help="source PPM")
    p.add_argument("--src-depth", required=True, help="source EXDM depth")
    p.add_argument("--src-cam", required=True, help="source camera JSON")
    p.add_argument("--dst-cam", required=True, help="target camera JSON")
    p.add_argument("--pose", required=True,
                   help="target robot pose in the source robot frame: x,y,theta or JSON file")
    p.add_argument("--working-scale", type=float, default=1.0)
    p.add_argument("--out", required=True, help="output PPM")
    p.set_defaults(func=cmd_warp)

    p = sub.add_parser("optimize", parents=[common], help="optimize one trajectory")
    p.add_argument("--scene", required=True)
    p.add_argument("--goal", help="x,y[,theta] in the world frame (default: scene goal)")
    p.add_argument("--cam", help="camera JSON used to sense the scene")
    _robot(p)
    p.add_argument("--forward-only", action="store_true")
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--restarts", type=int, default=4)
    p.add_argument("--restart-scale", type=float, default=1.0)
    p.add_argument("--radius-margin", type=float, default=0.0,
                   help="relative r_s inflation while optimizing (default 0)")
    p.add_argument("--out", required=True, help="trajectory CSV")
    p.add_argument("--report", required=True, help="report JSON")
    p.set_defaults(func=cmd_optimize)

    scene = sub.add_parser("scene", help="scene generation and rendering")
    ssub = scene.add_subparsers(dest="scene_command", required=True)
    p = ssub.add_parser("generate", parents=[common], help="write a seeded scene suite")
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--obstacle-free", action="store_true")
    p.add_argument("--fixture", choices=sorted(FIXTURES), help="write a named fixture instead")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_scene_generate)
    p = ssub.add_parser("render", parents=[common], help="raycast a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--cam", help="camera JSON (default: navigation camera)")
    p.add_argument("--pose", help="robot pose x,y[,theta] (default: scene start)")
    p.add_argument("--out-color", required=True)
    p.add_argument("--out-depth")
    p.set_defaults(func=cmd_scene_render)

    p = sub.add_parser("nav", parents=[common], help="run one navigation episode")
    p.add_argument("--scene", required=True)
    p.add_argument("--graph", help="graph JSON (default: built from the scene route)")
    _robot(p)
    p.add_argument("--max-steps", type=int, default=500)
    p.add_argument("--out", required=True, help="metrics JSON")
    p.add_argument("--trace", help="per-step CSV")
    p.set_defaults(func=cmd_nav)

    p = sub.add_parser("eval-suite", parents=[common], help="navigate a suite over a grid")
    p.add_argument("--suite", required=True, help="suite directory or a single scene JSON")
    _robot(p, many=True)
    p.add_argument("--max-steps", type=int, default=500)
    p.add_argument("--out", required=True, help="metrics JSON")
    p.add_argument("--report-dir", help="per-episode traces and figures")
    p.set_defaults(func=cmd_eval_suite)

    p = sub.add_parser("selftest", parents=[common], help="round-trip and gradient checks")
    p.add_argument("--quick", action="store_true")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        resolve_threads(args)
        return args.func(args)
    except OptimizationFailure as exc:
        print(f"exaug: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (UsageError, FileNotFoundError, IsADirectoryError, EmptySynthesisError,
            InvalidInputError, ValueError, ExaugError) as exc:
        print(f"exaug: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

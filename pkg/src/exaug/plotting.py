"""Figures written next to the JSON/CSV reports of the command-line tools."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Circle, Rectangle  # noqa: E402

from exaug.geometry import Pose2D  # noqa: E402
from exaug.scene import Box, Cylinder, SceneDescription  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}

# one color per radius / limit in comparison plots
PALETTE = ["#1b6ca8", "#d1495b", "#66a182", "#edae49", "#6a4c93"]


def figsize(scale: float = 1.0, ratio: float = 0.75) -> tuple[float, float]:
    width = 5.5 * scale
    return width, width * ratio


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def draw_scene(ax, scene: SceneDescription, robot_pose: Pose2D | None = None) -> None:
    """Obstacle footprints in the world frame, or in the robot frame if a pose is given."""
    origin = robot_pose or Pose2D()
    for prim in scene.obstacles:
        if isinstance(prim, Cylinder):
            c = origin.inverse().compose(Pose2D(*prim.center, 0.0)) if robot_pose else Pose2D(*prim.center)
            ax.add_patch(Circle((c.x, c.y), prim.radius, color="0.55", alpha=0.8, lw=0))
        elif isinstance(prim, Box):
            cx, cy = prim.center[:2]
            sx, sy = prim.size[:2]
            if robot_pose is None:
                ax.add_patch(Rectangle((cx - sx / 2, cy - sy / 2), sx, sy, color="0.55",
                                       alpha=0.8, lw=0))
            else:
                c = origin.inverse().compose(Pose2D(cx, cy))
                rect = Rectangle((c.x - sx / 2, c.y - sy / 2), sx, sy, color="0.55", alpha=0.8,
                                 lw=0, angle=np.degrees(-origin.theta), rotation_point="center")
                ax.add_patch(rect)


def plot_trajectories(path, scene: SceneDescription | None, results: dict, points=None,
                      goal: Pose2D | None = None, title: str = "") -> Path:
    """Top-down view of one or more optimized trajectories.

    ``results`` maps a label to ``(waypoints, radius)``; each trajectory is
    drawn with its robot disk at every waypoint.
    """
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize())
        if scene is not None:
            draw_scene(ax, scene)
        if points is not None and len(points):
            ax.scatter(points[:, 0], points[:, 1], s=1, c="0.2", label="cloud")
        for (label, (wp, radius)), color in zip(results.items(), PALETTE * 4):
            xy = np.vstack([[0.0, 0.0], np.asarray(wp)[:, :2]])
            ax.plot(xy[:, 0], xy[:, 1], "-o", ms=3, color=color, label=label)
            for x, y in xy[1:]:
                ax.add_patch(Circle((x, y), radius, fill=False, color=color, lw=0.5, alpha=0.5))
        if goal is not None:
            ax.plot(goal.x, goal.y, "*", ms=10, color="k", label="goal")
        ax.set_aspect("equal")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        if title:
            ax.set_title(title)
        ax.legend(loc="best", frameon=False)
        return _save(fig, path)


def plot_nav_trace(path, scene: SceneDescription, graph_poses, trace_rows, title: str = "") -> Path:
    """Driven path over the scene, graph nodes and pivot-turn locations."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize())
        draw_scene(ax, scene)
        nodes = np.array([[p.x, p.y] for p in graph_poses])
        ax.plot(nodes[:, 0], nodes[:, 1], "s--", ms=4, color="0.4", lw=0.8, label="graph")
        if trace_rows:
            tr = np.array([[r.x, r.y, r.pivot] for r in trace_rows], dtype=float)
            start = graph_poses[0]
            xy = np.vstack([[start.x, start.y], tr[:, :2]])
            ax.plot(xy[:, 0], xy[:, 1], "-", color=PALETTE[0], label="robot")
            piv = tr[:, 2] > 0
            if piv.any():
                ax.plot(tr[piv, 0], tr[piv, 1], "x", color=PALETTE[1], label="pivot turn")
        ax.set_aspect("equal")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        if title:
            ax.set_title(title)
        ax.legend(loc="best", frameon=False)
        return _save(fig, path)


def plot_suite_summary(path, summary: dict) -> Path:
    """Bar chart of TC / GA / CF rates per parameter setting."""
    with plt.rc_context(STYLE):
        labels = list(summary)
        fig, ax = plt.subplots(figsize=figsize(1.0, 0.6))
        x = np.arange(len(labels))
        for k, (metric, color) in enumerate(zip(("task_completion", "goal_arrival",
                                                  "collision_free"), PALETTE)):
            vals = [summary[lab][metric] for lab in labels]
            ax.bar(x + (k - 1) * 0.25, vals, 0.25, color=color, label=metric.replace("_", " "))
        ax.set_xticks(x)
        ax.set_xticklabels(labels, rotation=20, ha="right")
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("rate")
        ax.legend(loc="lower right", frameon=False)
        return _save(fig, path)


def plot_view_comparison(path, images: dict) -> Path:
    """Side-by-side RGB rasters, e.g. source, synthesized and reference views."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(images), figsize=figsize(1.2, 0.35))
        for ax, (label, img) in zip(np.atleast_1d(axes), images.items()):
            ax.imshow(img.rgb if hasattr(img, "rgb") else img)
            ax.set_title(label)
            ax.axis("off")
        return _save(fig, path)

"""Direct minimization of the trajectory cost over velocity commands.

Commands are reparameterized through a scaled tanh so the velocity limits
hold by construction. The gradient of rollout + cost is derived by hand in
reverse mode, with the collision indicator held fixed at the current
iterate. Each restart returns its best iterate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from exaug.errors import InvalidInputError, OptimizationFailure
from exaug.geometry import Pose2D
from exaug.objective import (
    DEFAULT_DT, DEFAULT_STEPS, CollisionPoints, ObjectiveBreakdown, ObjectiveWeights,
    RobotParams, Trajectory, _as_points, geo_mask, horizontal_distances, rollout,
    total_objective, traversability_gt,
)

_TANH_EDGE = 0.995


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-3
    max_iters: int = 500
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    convergence_tol: float = 1e-6
    patience: int = 50
    min_step_scale: float = 1e-4
    restarts: int = 4
    restart_scale: float = 0.5
    seed: int = 0
    forward_only: bool = False
    # relative inflation of r_s while optimizing; absorbs the shallow overlap a
    # quadratic penalty leaves at an active obstacle
    radius_margin: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidInputError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidInputError("Adam betas must lie in [0, 1)")
        if self.max_iters < 0 or self.restarts < 1:
            raise InvalidInputError("max_iters >= 0 and restarts >= 1 required")
        if self.radius_margin < 0:
            raise InvalidInputError("radius_margin must be non-negative")


@dataclass(frozen=True, eq=False)
class TrajectoryProblem:
    """One instance: reach ``goal`` from the origin without entering the cloud."""

    goal: Pose2D
    points: CollisionPoints
    params: RobotParams = RobotParams()
    weights: ObjectiveWeights = ObjectiveWeights()
    dt: float = DEFAULT_DT
    n_steps: int = DEFAULT_STEPS
    forward_only: bool = False

    @classmethod
    def build(cls, goal: Pose2D, cloud, params: RobotParams = RobotParams(),
              weights: ObjectiveWeights = ObjectiveWeights(), dt: float = DEFAULT_DT,
              n_steps: int = DEFAULT_STEPS, forward_only: bool = False) -> "TrajectoryProblem":
        """Keep only band points the horizon can reach; others never enter the cost."""
        pts = _as_points(cloud, params) if cloud is not None else CollisionPoints.empty()
        reach = params.v_max * dt * n_steps + max(params.r_s, params.r_s_prime)
        return cls(goal, pts.within(reach), params, weights, dt, n_steps, forward_only)

    # -- command parameterization ----------------------------------------

    def commands(self, raw: np.ndarray) -> np.ndarray:
        return parameterize(raw, self.params.v_max, self.params.omega_max, self.forward_only)

    def value(self, raw, mask: np.ndarray | None = None) -> ObjectiveBreakdown:
        """Cost of raw parameters through the reference objective functions."""
        return total_objective(self.commands(raw), self.goal, self.points, self.params,
                               self.weights, dt=self.dt, mask=mask)

    def mask_at(self, raw) -> np.ndarray:
        wp = rollout(self.commands(raw), self.dt)
        return geo_mask(wp, self.points, self.params.r_s)

    def value_and_grad(self, raw) -> tuple[float, np.ndarray]:
        raw = np.asarray(raw, dtype=float).reshape(self.n_steps, 2)
        p = self.params
        dt = self.dt
        tv, tw = np.tanh(raw[:, 0]), np.tanh(raw[:, 1])
        if self.forward_only:
            v = p.v_max * (tv + 1.0) / 2.0
            dv_draw = p.v_max * (1.0 - tv * tv) / 2.0
        else:
            v = p.v_max * tv
            dv_draw = p.v_max * (1.0 - tv * tv)
        w = p.omega_max * tw
        dw_draw = p.omega_max * (1.0 - tw * tw)

        # forward rollout
        heading = np.cumsum(w) * dt
        before = np.concatenate([[0.0], heading[:-1]])
        cb, sb = np.cos(before), np.sin(before)
        x = np.cumsum(v * cb * dt)
        y = np.cumsum(v * sb * dt)

        gx = np.zeros(self.n_steps)
        gy = np.zeros(self.n_steps)

        # goal term
        ex, ey = x[-1] - self.goal.x, y[-1] - self.goal.y
        j_pose = ex * ex + ey * ey
        gx[-1] += 2.0 * ex
        gy[-1] += 2.0 * ey

        # collision term, indicator frozen
        j_geo = 0.0
        pts = self.points
        if len(pts):
            dxp = x[:, None] - pts.xyz[None, :, 0]
            dyp = y[:, None] - pts.xyz[None, :, 1]
            d = np.hypot(dxp, dyp)
            m = (d < p.r_s) & pts.in_band[None, :]
            count = m.sum()
            if count:
                wgt = np.where(m, pts.weight[None, :], 0.0)
                gap = p.r_s - d
                j_geo = float((wgt * gap * gap).sum() / count)
                with np.errstate(invalid="ignore", divide="ignore"):
                    coef = np.where(d > 0, -2.0 * wgt * gap / d, 0.0) / count
                scale = self.weights.w_g
                gx += scale * (coef * dxp).sum(axis=1)
                gy += scale * (coef * dyp).sum(axis=1)

        # smoothness term, in command space
        cmds = np.stack([v, w], axis=1)
        diff = np.diff(cmds, axis=0)
        j_diff = float((diff * diff).sum())
        g_cmd = np.zeros_like(cmds)
        g_cmd[1:] += 2.0 * diff
        g_cmd[:-1] -= 2.0 * diff
        g_cmd *= self.weights.w_d

        # back through the rollout
        sx = np.cumsum(gx[::-1])[::-1]
        sy = np.cumsum(gy[::-1])[::-1]
        g_cmd[:, 0] += (sx * cb + sy * sb) * dt
        g_before = (-sx * sb + sy * cb) * v * dt
        # before[m] sums omega[j] for j < m
        tail = np.cumsum(g_before[::-1])[::-1]
        g_cmd[:-1, 1] += tail[1:] * dt

        grad = np.stack([g_cmd[:, 0] * dv_draw, g_cmd[:, 1] * dw_draw], axis=1)
        total = j_pose + self.weights.w_g * j_geo + self.weights.w_d * j_diff
        if not math.isfinite(total) or not np.all(np.isfinite(grad)):
            raise OptimizationFailure("objective or gradient is not finite")
        return float(total), grad


def parameterize(raw, v_max: float, omega_max: float, forward_only: bool = False) -> np.ndarray:
    """Map unconstrained parameters to commands inside the velocity box."""
    raw = np.asarray(raw, dtype=float).reshape(-1, 2)
    tv = np.tanh(raw[:, 0])
    v = v_max * (tv + 1.0) / 2.0 if forward_only else v_max * tv
    return np.stack([v, omega_max * np.tanh(raw[:, 1])], axis=1)


def unparameterize(commands, v_max: float, omega_max: float,
                   forward_only: bool = False) -> np.ndarray:
    """Raw parameters for the given commands, pulled inside the open tanh range."""
    cmds = np.asarray(commands, dtype=float).reshape(-1, 2)
    sv = cmds[:, 0] / v_max
    if forward_only:
        sv = 2.0 * sv - 1.0
    sv = np.clip(sv, -_TANH_EDGE, _TANH_EDGE)
    sw = np.clip(cmds[:, 1] / omega_max, -_TANH_EDGE, _TANH_EDGE)
    return np.stack([np.arctanh(sv), np.arctanh(sw)], axis=1)


def arc_to(goal_x: float, goal_y: float, n_steps: int, dt: float) -> tuple[float, float]:
    """Constant (v, omega) whose circular arc from the origin ends at the goal."""
    chord = math.hypot(goal_x, goal_y)
    if chord < 1e-9:
        return 0.0, 0.0
    alpha = math.atan2(goal_y, goal_x)
    turn = 2.0 * alpha
    horizon = n_steps * dt
    length = chord if abs(alpha) < 1e-9 else chord * alpha / math.sin(alpha)
    return length / horizon, turn / horizon


def gradient(problem: TrajectoryProblem, raw) -> np.ndarray:
    return problem.value_and_grad(raw)[1]


def finite_difference_gradient(problem: TrajectoryProblem, raw, h: float = 1e-5) -> np.ndarray:
    """Central differences of the reference objective with the indicator frozen at ``raw``."""
    raw = np.asarray(raw, dtype=float).reshape(problem.n_steps, 2)
    mask = problem.mask_at(raw)
    grad = np.zeros_like(raw)
    for idx in np.ndindex(raw.shape):
        step = np.zeros_like(raw)
        step[idx] = h
        hi = problem.value(raw + step, mask=mask).total
        lo = problem.value(raw - step, mask=mask).total
        grad[idx] = (hi - lo) / (2.0 * h)
    return grad


@dataclass(frozen=True, eq=False)
class OptimizationResult:
    trajectory: Trajectory
    final_objective: float
    breakdown: ObjectiveBreakdown
    iterations: int
    converged: bool
    initial_objective: float = float("nan")
    restart: int = 0
    history: tuple = field(default=(), repr=False)

    def to_dict(self) -> dict:
        return {
            "final_objective": self.final_objective,
            "initial_objective": self.initial_objective,
            "iterations": self.iterations,
            "converged": self.converged,
            "restart": self.restart,
            "terms": self.breakdown.to_dict(),
        }


def initial_raw(problem: TrajectoryProblem) -> np.ndarray:
    v, w = arc_to(problem.goal.x, problem.goal.y, problem.n_steps, problem.dt)
    cmds = np.tile([v, w], (problem.n_steps, 1))
    return unparameterize(cmds, problem.params.v_max, problem.params.omega_max,
                          problem.forward_only)


def adam(problem: TrajectoryProblem, raw0: np.ndarray, config: OptimizerConfig):
    """Adam from ``raw0``, keeping the best iterate seen as the incumbent.

    The collision cost is a mean over penetrating points, so it can rise
    when a shallow point leaves the robot disk; plain Adam steps are taken
    regardless and only strict improvements replace the incumbent. A step
    that produces a non-finite cost is discarded and the step size halved.

    Returns ``(raw, value, iterations, converged, history)`` where
    ``history`` lists the incumbent value after each accepted improvement.
    """
    x = np.array(raw0, dtype=float)
    f, g = problem.value_and_grad(x)
    best_x, best_f = x.copy(), f
    m = np.zeros_like(x)
    s = np.zeros_like(x)
    scale = 1.0
    quiet = 0
    history = [f]
    converged = best_f == 0.0
    it = 0
    for it in range(1, config.max_iters + 1):
        if converged:
            it -= 1
            break
        m = config.beta1 * m + (1 - config.beta1) * g
        s = config.beta2 * s + (1 - config.beta2) * g * g
        m_hat = m / (1 - config.beta1 ** it)
        s_hat = s / (1 - config.beta2 ** it)
        cand = x - scale * config.learning_rate * m_hat / (np.sqrt(s_hat) + config.epsilon)
        try:
            f_new, g_new = problem.value_and_grad(cand)
        except OptimizationFailure:
            scale *= 0.5
            x, g = best_x.copy(), problem.value_and_grad(best_x)[1]
            if scale < config.min_step_scale:
                break
            continue
        x, f, g = cand, f_new, g_new
        if f < best_f:
            rel = (best_f - f) / max(abs(best_f), 1e-12)
            best_x, best_f = x.copy(), f
            history.append(f)
            quiet = quiet + 1 if rel < config.convergence_tol else 0
        else:
            quiet += 1
        if quiet >= config.patience or best_f == 0.0:
            converged = True
            break
    return best_x, best_f, it, converged, tuple(history)


def optimize(problem: TrajectoryProblem, config: OptimizerConfig = OptimizerConfig()
             ) -> OptimizationResult:
    """Best result over restarts; restart 0 starts on the arc through the goal.

    With ``config.radius_margin`` set, the search runs on an inflated robot
    radius while the returned breakdown is evaluated at the nominal one.
    """
    if config.forward_only != problem.forward_only:
        problem = replace(problem, forward_only=config.forward_only)
    nominal = problem
    if config.radius_margin > 0:
        r_s = problem.params.r_s * (1.0 + config.radius_margin)
        problem = replace(problem, params=replace(problem.params, r_s=r_s))
    base = initial_raw(problem)
    rng = np.random.default_rng(config.seed)
    perturb = rng.normal(0.0, config.restart_scale, size=(config.restarts,) + base.shape)
    # alternate a left-then-right / right-then-left swerve on the turn rate
    half = problem.n_steps // 2
    for r in range(1, config.restarts):
        sign = 1.0 if r % 2 else -1.0
        perturb[r, :half, 1] += sign * config.restart_scale
        perturb[r, half:, 1] -= sign * config.restart_scale
    best = None
    for r in range(config.restarts):
        raw0 = base if r == 0 else base + perturb[r]
        try:
            f0 = problem.value_and_grad(raw0)[0]
            raw, f, iters, conv, hist = adam(problem, raw0, config)
        except OptimizationFailure:
            continue
        if best is None or f < best[1]:
            best = (raw, f, iters, conv, hist, f0, r)
    if best is None:
        raise OptimizationFailure("every restart produced a non-finite objective")
    raw, f, iters, conv, hist, f0, r = best
    cmds = nominal.commands(raw)
    wp = rollout(cmds, nominal.dt)
    trav = traversability_gt(wp, nominal.points, nominal.params)
    breakdown = nominal.value(raw)
    return OptimizationResult(
        Trajectory(cmds, wp, trav), breakdown.total, breakdown, iters, conv,
        initial_objective=f0, restart=r, history=hist,
    )


def omega_sweep(problem: TrajectoryProblem, omega_values: Sequence[float],
                config: OptimizerConfig = OptimizerConfig()) -> list[OptimizationResult]:
    results = []
    for omega in omega_values:
        if omega <= 0:
            raise InvalidInputError(f"omega limit must be positive, got {omega}")
        sub = replace(problem, params=replace(problem.params, omega_max=float(omega)))
        results.append(optimize(sub, config))
    return results


def gradient_check(problem: TrajectoryProblem, raw, h: float = 1e-5,
                   floor: Optional[float] = None) -> float:
    """Largest componentwise relative error between analytic and FD gradients.

    Components are compared relative to ``max(|analytic|, |fd|, floor)``;
    the default floor is 1e-6 times the largest gradient magnitude so that
    components at round-off level do not dominate.
    """
    ga = gradient(problem, raw)
    gf = finite_difference_gradient(problem, raw, h)
    scale = max(np.abs(ga).max(), np.abs(gf).max(), 1e-300)
    floor = 1e-6 * scale if floor is None else floor
    denom = np.maximum(np.maximum(np.abs(ga), np.abs(gf)), floor)
    return float((np.abs(ga - gf) / denom).max())

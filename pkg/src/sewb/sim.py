"""Fixed-step kinematic simulation of the robot among scripted obstacles."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .controller import Controller, ControllerParams, ControlOutput
from .kinematics import N_BASE, JointConfig, RobotModel, Transform, chain_state, forward_kinematics, pose_error
from .safety import joint_barrier, reach_barrier
from .world import (
    DistanceReport,
    ObstacleState,
    arm_distance,
    base_distance,
    obstacles_at,
)

log = logging.getLogger(__name__)

STALL_SPEED = 1e-3
STALL_ERROR = 0.2  # a stall only counts while the end effector is this far from the goal
INTERNAL_TOL = 1e-6


@dataclass(frozen=True)
class WorldState:
    time: float
    q: JointConfig
    obstacles: tuple = ()  # Obstacle scripts
    payload: bool = False

    @property
    def obstacle_states(self) -> list[ObstacleState]:
        return obstacles_at(list(self.obstacles), self.time)

    @property
    def base_pose(self) -> tuple[float, float, float]:
        return self.q.base_pose


@dataclass
class StepEvents:
    clamped: list[int] = field(default_factory=list)


def step(world: WorldState, model: RobotModel, qdot: np.ndarray, dt: float) -> tuple[WorldState, StepEvents]:
    """Advance time by ``dt`` with explicit Euler; arm joints are clamped to their limits."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    qdot = np.asarray(qdot, dtype=float)
    if not np.all(np.isfinite(qdot)):
        raise ValueError("command must be finite")
    q = world.q.advance(qdot, dt)
    lo, hi = model.lower[N_BASE:], model.upper[N_BASE:]
    events = StepEvents()
    outside = (q.arm < lo) | (q.arm > hi)
    if outside.any():
        events.clamped = [int(i) + N_BASE for i in np.flatnonzero(outside)]
        log.warning("t=%.3f: joint position clamp on %s", world.time + dt, events.clamped)
        q = q.with_arm(np.clip(q.arm, lo, hi))
    return replace(world, time=world.time + dt, q=q), events


def min_distance(
    world: WorldState, model: RobotModel, obstacles: list[ObstacleState] | None = None
) -> tuple[float, DistanceReport | None]:
    """Hard minimum clearance over the base disc and every capsule against every obstacle."""
    obstacles = world.obstacle_states if obstacles is None else obstacles
    best, best_rep = math.inf, None
    if not obstacles:
        return best, None
    state = chain_state(model, world.q)
    for ob in obstacles:
        rep = base_distance(model, world.q, ob, state)
        if rep.value < best:
            best, best_rep = rep.value, rep
        rep = arm_distance(model, world.q, ob, 1.0, state)
        if rep.hard_min < best:
            best, best_rep = rep.hard_min, rep
    return float(best), best_rep


# -- goals --------------------------------------------------------------------


@dataclass(frozen=True)
class Goal:
    position: np.ndarray
    rotation: np.ndarray
    payload: str | None = None  # "attach" or "detach" once reached


class GoalSchedule:
    """Sequential goals; with a speed, the reference slides toward each goal along a straight line."""

    def __init__(self, goals: list[Goal], start: np.ndarray, speed: float | None = None):
        if not goals:
            raise ValueError("at least one goal is required")
        self.goals = goals
        self.speed = speed
        self.index = 0
        self._origin = np.asarray(start, dtype=float)
        self._t0 = 0.0

    @property
    def done(self) -> bool:
        return self.index >= len(self.goals)

    @property
    def current(self) -> Goal:
        return self.goals[min(self.index, len(self.goals) - 1)]

    def reference(self, t: float) -> Transform:
        goal = self.current
        pos = goal.position
        if self.speed:
            span = goal.position - self._origin
            length = float(np.linalg.norm(span))
            if length > 0:
                frac = min(1.0, self.speed * (t - self._t0) / length)
                pos = self._origin + frac * span
        return Transform(goal.rotation, pos)

    def final_target(self) -> Transform:
        return Transform(self.current.rotation, self.current.position)

    def advance(self, t: float):
        self._origin = self.current.position
        self._t0 = t
        self.index += 1


# -- traces -------------------------------------------------------------------

ROW_TAGS = ("base-dcbf", "base-aci", "arm-dcbf", "arm-aci")


def trace_header(model: RobotModel) -> list[str]:
    arm = [f"q{i}" for i in range(1, model.n_arm + 1)]
    return (
        ["t", "x", "y", "phi", "d", *arm, "qd_d", "qd_phi"]
        + [f"qd_{a}" for a in arm]
        + [f"delta{i}" for i in range(1, 7)]
        + ["min_dist", "e_x", "e_y", "e_z", "e_rx", "e_ry", "e_rz", "e_norm", "V", "V_dot", "n_ob"]
        + ["lam_b", "lam_m", "lam_delta"]
        + ["rows_" + t.replace("-", "_") for t in ROW_TAGS]
        + ["binding_rows", "b_jb_min", "b_mr", "status", "iterations", "solve_ms", "goal_index", "payload"]
    )


@dataclass
class StepTrace:
    time: float
    q: JointConfig
    qdot: np.ndarray
    delta: np.ndarray
    min_distance: float
    error: np.ndarray
    V: float
    V_dot: float
    n_ob: int
    weights: tuple
    row_counts: dict
    binding_rows: int
    b_jb_min: float
    b_mr: float
    status: str
    iterations: int
    solve_ms: float
    goal_index: int
    payload: bool
    aci: list = field(default_factory=list)
    active_ids: tuple = ()

    @property
    def e_norm(self) -> float:
        return float(np.linalg.norm(self.error))

    def row(self) -> list:
        q = self.q
        return [
            self.time,
            q.x,
            q.y,
            q.phi,
            q.d,
            *q.arm,
            *self.qdot,
            *self.delta,
            self.min_distance,
            *self.error,
            self.e_norm,
            self.V,
            self.V_dot,
            self.n_ob,
            *self.weights,
            *(self.row_counts.get(t, 0) for t in ROW_TAGS),
            self.binding_rows,
            self.b_jb_min,
            self.b_mr,
            self.status,
            self.iterations,
            self.solve_ms,
            self.goal_index,
            int(self.payload),
        ]


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "inf" if v == math.inf else repr(round(float(v), 9))
    return str(v)


def write_trace(path, model: RobotModel, records: list[StepTrace]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(trace_header(model))
        for r in records:
            w.writerow([_fmt(v) for v in r.row()])


# -- runs ---------------------------------------------------------------------


@dataclass
class SimSummary:
    success: bool
    completion_time: float | None
    steps: int
    min_distance: float
    max_qdot: np.ndarray
    mean_solve_ms: float
    max_solve_ms: float
    mean_iterations: float
    max_iterations: int
    infeasible_cycles: int
    clamp_events: int
    internal_violations: int
    min_joint_barrier: float
    min_reach_barrier: float
    stall_time: float | None
    final_error: float
    goals_reached: int

    @property
    def stalled(self) -> bool:
        return self.stall_time is not None

    @property
    def safety_violation(self) -> bool:
        return self.min_distance < 0 or self.clamp_events > 0 or self.internal_violations > 0

    def deterministic_items(self) -> list[tuple[str, object]]:
        """Every summary field except wall-clock timings."""
        return [
            ("success", self.success),
            ("completion_time", self.completion_time),
            ("steps", self.steps),
            ("goals_reached", self.goals_reached),
            ("min_distance", self.min_distance),
            ("max_qdot", " ".join(_fmt(v) for v in self.max_qdot)),
            ("mean_iterations", self.mean_iterations),
            ("max_iterations", self.max_iterations),
            ("infeasible_cycles", self.infeasible_cycles),
            ("clamp_events", self.clamp_events),
            ("internal_violations", self.internal_violations),
            ("min_joint_barrier", self.min_joint_barrier),
            ("min_reach_barrier", self.min_reach_barrier),
            ("stalled", self.stalled),
            ("stall_time", self.stall_time),
            ("final_error", self.final_error),
        ]


def _within(error: np.ndarray, tol_pos: float, tol_rot: float) -> bool:
    return np.linalg.norm(error[:3]) < tol_pos and np.linalg.norm(error[3:]) < tol_rot


def run_scenario(
    scenario,
    model: RobotModel,
    params: ControllerParams | None = None,
    record_aci: bool = False,
) -> tuple[list[StepTrace], SimSummary]:
    """Run ``scenario`` until every goal is held within tolerance for the dwell time, or the horizon.

    With ``scenario.stop_on_success`` false the run always lasts the full
    horizon and success also requires the last goal to be held at the end.
    """
    params = params or scenario.controller
    dt = scenario.dt
    world = WorldState(0.0, scenario.start, tuple(scenario.obstacles), False)
    ctrl = Controller(model, params, dt)
    start_ee = forward_kinematics(model, scenario.start).translation
    goals = GoalSchedule(list(scenario.goals), start_ee, scenario.goal_speed)
    tol_pos, tol_rot, dwell = scenario.tol_pos, scenario.tol_rot, scenario.dwell
    stop_on_success = getattr(scenario, "stop_on_success", True)

    n_steps = int(math.ceil(scenario.horizon / dt - 1e-9))
    records: list[StepTrace] = []
    dwell_start: float | None = None
    completion = None
    stall_time = None
    clamp_events = internal = infeasible = 0
    min_jb = min_mr = math.inf
    global_min = math.inf

    for k in range(n_steps):
        t = k * dt
        obstacles = world.obstacle_states
        out: ControlOutput = ctrl.step(world.q, goals.reference(t), obstacles)
        dmin, _ = min_distance(world, model, obstacles)
        global_min = min(global_min, dmin)
        state = chain_state(model, world.q)
        jb = joint_barrier(model, world.q)
        b_jb = float(np.min(jb[np.isfinite(jb)]))
        b_mr = reach_barrier(model, state)
        min_jb, min_mr = min(min_jb, b_jb), min(min_mr, b_mr)
        if b_jb < -INTERNAL_TOL or b_mr < -INTERNAL_TOL:
            internal += 1
        if not out.ok:
            infeasible += 1
        counts: dict[str, int] = {}
        for r in out.rows:
            counts[r.tag] = counts.get(r.tag, 0) + 1
        sol = out.solution
        binding = int(np.count_nonzero(sol.lam_in > 0)) if sol is not None and out.ok else 0
        active_ids = tuple(sorted(set(out.trace.base_active) | set(out.trace.arm_active)))
        records.append(
            StepTrace(
                time=t,
                q=world.q,
                qdot=out.qdot,
                delta=out.delta,
                min_distance=dmin,
                error=out.error,
                V=out.V,
                V_dot=out.V_dot,
                n_ob=out.n_ob,
                weights=(out.lam_b, out.lam_m, out.lam_delta),
                row_counts=counts,
                binding_rows=binding,
                b_jb_min=b_jb,
                b_mr=b_mr,
                status=out.status,
                iterations=out.iterations,
                solve_ms=out.solve_ms,
                goal_index=goals.index,
                payload=world.payload,
                aci=list(out.trace.aci) if record_aci else [],
                active_ids=active_ids,
            )
        )

        err_final = out.error if not goals.speed else _final_error(model, world.q, goals)
        if _within(err_final, tol_pos, tol_rot):
            if dwell_start is None:
                dwell_start = t
            if not goals.done and t - dwell_start >= dwell - 1e-9:
                goal = goals.current
                if goal.payload is not None:
                    world = replace(world, payload=goal.payload == "attach")
                goals.advance(t)
                if goals.done:
                    completion = dwell_start
                    if stop_on_success:
                        break
                else:
                    dwell_start = None
        else:
            dwell_start = None
        if stall_time is None and t > 0 and abs(out.qdot[0]) < STALL_SPEED:
            if np.linalg.norm(err_final[:3]) > STALL_ERROR:
                stall_time = t

        world, events = step(world, model, out.qdot, dt)
        clamp_events += len(events.clamped)

    settled = dwell_start is not None and records[-1].time - dwell_start >= dwell - 1e-9
    success = completion is not None and (stop_on_success or settled)
    solve = np.array([r.solve_ms for r in records]) if records else np.zeros(1)
    iters = np.array([r.iterations for r in records]) if records else np.zeros(1, dtype=int)
    summary = SimSummary(
        success=success,
        completion_time=None if completion is None else round(completion, 9),
        steps=len(records),
        min_distance=float(global_min),
        max_qdot=np.max(np.abs([r.qdot for r in records]), axis=0) if records else np.zeros(model.n),
        mean_solve_ms=float(solve.mean()),
        max_solve_ms=float(solve.max()),
        mean_iterations=float(iters.mean()),
        max_iterations=int(iters.max()),
        infeasible_cycles=infeasible,
        clamp_events=clamp_events,
        internal_violations=internal,
        min_joint_barrier=float(min_jb),
        min_reach_barrier=float(min_mr),
        stall_time=stall_time,
        final_error=float(records[-1].e_norm) if records else 0.0,
        goals_reached=goals.index,
    )
    return records, summary


def _final_error(model, q, goals: GoalSchedule) -> np.ndarray:
    return pose_error(forward_kinematics(model, q), goals.final_target())


def summary_text(items: list[tuple[str, object]]) -> str:
    buf = io.StringIO()
    for k, v in items:
        buf.write(f"{k}: {_fmt(v) if v is not None else 'none'}\n")
    return buf.getvalue()

"""Per-cycle whole-body control law.

Each cycle solves one QP over ``u = (q_dot, delta)``: the end-effector
twist plus a 6-dof slack must equal the servo target, the cost blends base,
arm and slack weights according to the obstacle clearance and the pose error,
and the safety rows keep the robot clear of obstacles and joint limits.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import qp
from .kinematics import (
    N_BASE,
    ChainState,
    JointConfig,
    RobotModel,
    Transform,
    chain_state,
    extended_jacobian,
    manipulability_gradient,
    pose_error,
)
from .safety import (
    N_SLACK,
    ConstraintRow,
    SafetyParams,
    SafetyTrace,
    assemble_safety_constraints,
)
from .world import ObstacleState

log = logging.getLogger(__name__)

MODES = ("sewb", "cbf-only", "unconstrained")
FAR = 1e3  # clearance used when no obstacle exists


@dataclass
class ControllerParams:
    p_servo: tuple = (1.5, 1.5, 1.5, 1.0, 1.0, 1.0)
    k_sigma: float = 10.0
    t_sigma: float = 1.0
    k_lambda_m: float = 0.1
    eps_floor: float = 1e-3
    weight_floor: float = 1e-9
    k_manip: float = 0.05
    k_head: float = 0.5
    v_lin_cap: float = 1.5
    v_ang_cap: float = 2.0
    mode: str = "sewb"
    qp_tol: float = 1e-6
    qp_max_iter: int = 4000
    safety: SafetyParams = field(default_factory=SafetyParams)

    def __post_init__(self):
        self.p_servo = tuple(float(x) for x in np.asarray(self.p_servo, dtype=float).reshape(-1))
        if len(self.p_servo) != 6 or min(self.p_servo) <= 0:
            raise ValueError("p_servo must hold 6 positive gains")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        for name in ("k_sigma", "eps_floor", "weight_floor", "v_lin_cap", "v_ang_cap", "qp_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("k_lambda_m", "k_manip", "k_head"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def with_mode(self, mode: str) -> "ControllerParams":
        return replace(self, mode=mode)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class ExpectationRow:
    """Six stacked equality rows ``[J | I] u = v_star``."""

    coeffs: np.ndarray
    v_star: np.ndarray
    error: np.ndarray
    tag: str = "velocity-expectation"

    def residual(self, u: np.ndarray) -> np.ndarray:
        return self.coeffs @ u - self.v_star

    def as_rows(self) -> list[ConstraintRow]:
        return [
            ConstraintRow(c, float(b), "equality", self.tag) for c, b in zip(self.coeffs, self.v_star)
        ]


@dataclass
class ControlOutput:
    qdot: np.ndarray
    delta: np.ndarray
    lam_b: float
    lam_m: float
    lam_delta: float
    n_ob: int
    status: str
    V: float
    V_dot: float
    error: np.ndarray
    v_star: np.ndarray
    rows: list = field(default_factory=list)
    solution: qp.QpSolution | None = None
    trace: SafetyTrace | None = None
    base_b: float = np.inf
    whole_b: float = np.inf

    @property
    def ok(self) -> bool:
        return self.status == qp.OPTIMAL

    @property
    def solve_ms(self) -> float:
        return 1e3 * self.solution.solve_time if self.solution is not None else 0.0

    @property
    def iterations(self) -> int:
        return self.solution.iterations if self.solution is not None else 0


def sigmoid(x: float, k: float, t: float) -> float:
    z = -k * (x - t)
    if z > 700:
        return 0.0
    return 1.0 / (1.0 + np.exp(z))


def servo_target(error: np.ndarray, params: ControllerParams) -> np.ndarray:
    v = np.asarray(params.p_servo) * error
    for sl, cap in ((slice(0, 3), params.v_lin_cap), (slice(3, 6), params.v_ang_cap)):
        nv = np.linalg.norm(v[sl])
        if nv > cap:
            v[sl] *= cap / nv
    return v


def expectation_row(
    model: RobotModel,
    q: JointConfig,
    goal: Transform,
    params: ControllerParams,
    state: ChainState | None = None,
) -> ExpectationRow:
    state = state or chain_state(model, q)
    err = pose_error(Transform.from_matrix(state.ee), goal)
    A = np.hstack((extended_jacobian(model, q, state), np.eye(N_SLACK)))
    return ExpectationRow(A, servo_target(err, params), err)


def cost_weights(
    eps_norm: float, base_b: float, whole_b: float, params: ControllerParams
) -> tuple[float, float, float]:
    """Base, arm and slack weights.

    Far from obstacles the base and slack weights tend to ``1/eps`` and the arm
    weight to ``k_lambda_m``; close to an obstacle all three fall toward the
    clearance itself.
    """
    inv_eps = 1.0 / max(eps_norm, params.eps_floor)

    def blend(x, far):
        x = FAR if not np.isfinite(x) else x
        s = sigmoid(x, params.k_sigma, params.t_sigma)
        return max(s * far + (1.0 - s) * x, params.weight_floor)

    lam_b = blend(base_b, inv_eps)
    lam_m = blend(whole_b, params.k_lambda_m)
    lam_d = blend(min(base_b, whole_b), inv_eps)
    return lam_b, lam_m, lam_d


def wrap_angle(a: float) -> float:
    return float((a + np.pi) % (2 * np.pi) - np.pi)


def goal_bearing(q: JointConfig, goal: Transform) -> float | None:
    dx, dy = goal.translation[0] - q.x, goal.translation[1] - q.y
    if np.hypot(dx, dy) < 1e-6:
        return None
    return float(np.arctan2(dy, dx))


def build_cost(
    model: RobotModel,
    q: JointConfig,
    weights: tuple[float, float, float],
    params: ControllerParams,
    goal: Transform | None = None,
    state: ChainState | None = None,
    heading: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal weights plus the linear term.

    The base heading is pulled toward ``heading`` when given (the dodge
    tangent of the nearest base obstacle), otherwise toward the goal bearing.
    """
    lam_b, lam_m, lam_d = (max(w, params.weight_floor) for w in weights)
    diag = np.concatenate((np.full(N_BASE, lam_b), np.full(model.n_arm, lam_m), np.full(N_SLACK, lam_d)))
    g = np.zeros(model.n + N_SLACK)
    grad, _ = manipulability_gradient(model, q, state)
    g[N_BASE : model.n] = -params.k_manip * grad
    bearing = heading if heading is not None else (goal_bearing(q, goal) if goal is not None else None)
    if bearing is not None:
        g[1] = -params.k_head * wrap_angle(bearing - q.phi)
    return np.diag(diag), g


def lyapunov_diagnostic(prev_error, curr_error, dt: float) -> tuple[float, float]:
    if not dt > 0:
        raise ValueError("dt must be positive")
    V = 0.5 * float(np.dot(curr_error, curr_error))
    if prev_error is None:
        return V, 0.0
    V_prev = 0.5 * float(np.dot(prev_error, prev_error))
    return V, (V - V_prev) / dt


def dodge_heading(trace: SafetyTrace) -> float | None:
    """Bearing of the base tangent chosen for the closest base-active obstacle, if any."""
    best, bearing = np.inf, None
    for res in trace.aci:
        if res.context != "base":
            continue
        b = trace.base_reports[res.obstacle].value
        if b < best:
            best, bearing = b, float(np.arctan2(res.l_star[1], res.l_star[0]))
    return bearing


def _clearances(trace: SafetyTrace) -> tuple[float, float]:
    base = [r.value for r in trace.base_reports.values()]
    arm = [r.value for r in trace.arm_reports.values()]
    base_b = min(base) if base else np.inf
    whole_b = min(base + arm) if (base or arm) else np.inf
    return base_b, whole_b


class Controller:
    """Stateful wrapper holding the previous error and solution between cycles."""

    def __init__(self, model: RobotModel, params: ControllerParams | None = None, dt: float = 0.01):
        self.model = model
        self.params = params or ControllerParams()
        self.dt = dt
        self.reset()

    def reset(self):
        self.prev_error: np.ndarray | None = None
        self.prev_u: np.ndarray | None = None
        self.prev_qdot = np.zeros(self.model.n)

    def build(self, q: JointConfig, goal: Transform, obstacles: list[ObstacleState]) -> "CycleProblem":
        """Assemble this cycle's QP without solving it or touching controller state."""
        model, params = self.model, self.params
        for ob in obstacles:
            if not (np.all(np.isfinite(ob.position)) and np.all(np.isfinite(ob.velocity))):
                raise ValueError("obstacle state contains NaN")
        state = chain_state(model, q)
        exp = expectation_row(model, q, goal, params, state)
        trace = SafetyTrace()
        rows = assemble_safety_constraints(
            model, q, obstacles, params.safety, self.prev_qdot, params.mode == "sewb", state, trace
        )
        if params.mode == "unconstrained":
            rows = []  # distances still drive the cost weights
        base_b, whole_b = _clearances(trace)
        weights = cost_weights(float(np.linalg.norm(exp.error)), base_b, whole_b, params)
        H, g = build_cost(model, q, weights, params, goal, state, dodge_heading(trace))
        m = model.n + N_SLACK
        ub = np.concatenate((model.max_velocity, np.full(N_SLACK, np.inf)))
        problem = qp.QpProblem(
            H,
            g,
            exp.coeffs,
            exp.v_star,
            np.array([r.coeffs for r in rows]).reshape(-1, m),
            np.array([r.bound for r in rows]),
            -ub,
            ub,
        )
        return CycleProblem(problem, exp, rows, trace, weights, base_b, whole_b)

    def step(self, q: JointConfig, goal: Transform, obstacles: list[ObstacleState]) -> ControlOutput:
        model, params = self.model, self.params
        cyc = self.build(q, goal, obstacles)
        m = model.n + N_SLACK
        warm = self.prev_u if self.prev_u is not None and self.prev_u.size == m else None
        sol = qp.solve(cyc.problem, params.qp_tol, params.qp_max_iter, warm_start=warm)
        if sol.ok:
            # bounds hold to solver tolerance; snap onto the box so limits hold exactly
            u = np.clip(sol.u, cyc.problem.lb, cyc.problem.ub)
        else:
            log.warning(
                "QP %s at |eps|=%.3g (conflict %s): commanding zero velocity",
                sol.status,
                np.linalg.norm(cyc.expectation.error),
                sol.conflict,
            )
            u = np.zeros(m)

        err = cyc.expectation.error
        V, V_dot = lyapunov_diagnostic(self.prev_error, err, self.dt)
        self.prev_error = err
        self.prev_u = u.copy() if sol.ok else None
        self.prev_qdot = u[: model.n].copy()
        trace = cyc.trace
        active = set(trace.base_active) | set(trace.arm_active)
        return ControlOutput(
            qdot=u[: model.n].copy(),
            delta=u[model.n :].copy(),
            lam_b=cyc.weights[0],
            lam_m=cyc.weights[1],
            lam_delta=cyc.weights[2],
            n_ob=0 if params.mode == "unconstrained" else len(active),
            status=sol.status,
            V=V,
            V_dot=V_dot,
            error=err,
            v_star=cyc.expectation.v_star,
            rows=cyc.rows,
            solution=sol,
            trace=trace,
            base_b=cyc.base_b,
            whole_b=cyc.whole_b,
        )


@dataclass
class CycleProblem:
    problem: qp.QpProblem
    expectation: ExpectationRow
    rows: list
    trace: SafetyTrace
    weights: tuple
    base_b: float
    whole_b: float


def control_step(
    model: RobotModel,
    q: JointConfig,
    goal: Transform,
    obstacles: list[ObstacleState],
    params: ControllerParams | None = None,
    controller: Controller | None = None,
) -> ControlOutput:
    """One control cycle; pass a ``Controller`` to carry warm-start state across calls."""
    controller = controller or Controller(model, params)
    return controller.step(q, goal, obstacles)

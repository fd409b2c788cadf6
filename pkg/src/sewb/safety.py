"""Safety rows for the per-cycle QP.

Every row is linear in the decision vector ``u = (q_dot, delta)`` of length
``n + 6`` and reads ``coeffs @ u <= bound``.  External rows come in pairs per
obstacle and body: a dynamic barrier row (DCBF) that limits the approach
rate, and an adaptive cyclic inequality (ACI) row that demands motion along a
chosen tangent of the barrier gradient.  Internal rows keep every joint
inside its limits and the end effector within reach of the base.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields

import numpy as np

from .kinematics import (
    EZ,
    N_BASE,
    ChainState,
    JointConfig,
    RobotModel,
    base_point_jacobian,
    chain_state,
    extended_jacobian,
    world_point_jacobian,
)
from .world import (
    DistanceReport,
    ObstacleState,
    arm_distance,
    base_distance,
    dcbf_drift,
    operating_set_test,
    relative_speed,
)

log = logging.getLogger(__name__)

N_SLACK = 6
TIE_TOL = 1e-12

TAGS = ("base-dcbf", "base-aci", "arm-dcbf", "arm-aci", "joint-bound", "max-reach", "velocity-expectation")


@dataclass
class ConstraintRow:
    coeffs: np.ndarray
    bound: float
    kind: str = "inequality"  # or "equality"
    tag: str = "joint-bound"
    obstacle: str | None = None

    def __post_init__(self):
        if self.kind not in ("inequality", "equality"):
            raise ValueError(f"unknown row kind {self.kind!r}")
        if self.tag not in TAGS:
            raise ValueError(f"unknown row tag {self.tag!r}")

    def residual(self, u: np.ndarray) -> float:
        """Signed violation: positive means the row is violated."""
        return float(self.coeffs @ u - self.bound)

    @property
    def vacuous(self) -> bool:
        return self.bound == np.inf


@dataclass
class AciResult:
    l_star: np.ndarray
    objective: float
    candidates: np.ndarray  # (m, 3) evaluated tangents
    values: np.ndarray  # objective per candidate
    context: str  # "base" or "arm"
    obstacle: str | None = None
    index: int = 0
    # inputs of the objective, kept so the choice can be audited afterwards
    normal: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    priors: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    heading: np.ndarray = field(default_factory=lambda: np.zeros(3))
    db_dphi: float = 0.0

    @property
    def count(self) -> int:
        return len(self.candidates)


@dataclass
class SafetyParams:
    k_ot: float = 0.6
    k_ro: float = 0.7
    ot_floor: float = 0.1  # keeps rows alive when the relative speed is near zero
    alpha: float = 1.0
    d_b: float = 0.25
    d_m: float = 0.25
    D_m: float = 0.5
    k_b1: float = 1.0
    k_b2: float = 0.3
    k_b3: float = 0.5
    k_m1: float = 1.0
    k_m2: float = 0.3
    k_m3: float = 1.0
    gamma_jb: float = 0.1
    gamma_mr: float = 0.1
    n_tangent: int = 36
    softmin: float = 50.0

    def __post_init__(self):
        for f in fields(self):
            if f.name != "n_tangent" and not getattr(self, f.name) > 0:
                raise ValueError(f"safety parameter {f.name} must be positive")
        if int(self.n_tangent) != self.n_tangent or self.n_tangent < 8:
            raise ValueError("n_tangent must be an integer >= 8")

    def class_k(self, b: float) -> float:
        return self.alpha * b


def _row(model: RobotModel, coeffs_q: np.ndarray, bound: float, tag: str, obstacle=None) -> ConstraintRow:
    coeffs = np.zeros(model.n + N_SLACK)
    coeffs[: coeffs_q.size] = coeffs_q
    return ConstraintRow(coeffs, float(bound), "inequality", tag, obstacle)


# -- mobile base ------------------------------------------------------------


def base_gradient(model: RobotModel, state: ChainState, report: DistanceReport) -> np.ndarray:
    """db/d(d, phi) for a planar base report, through the unicycle kinematics."""
    center = state.base[:3, 3] + model.base_disc_offset * state.base[:3, 0]
    return report.normal @ base_point_jacobian(state, center)


def base_dcbf_row(
    model: RobotModel,
    q: JointConfig,
    report: DistanceReport,
    obstacle: ObstacleState,
    params: SafetyParams,
    state: ChainState | None = None,
) -> ConstraintRow | None:
    if report.degenerate:
        log.warning("base overlaps obstacle %s center; DCBF row skipped", obstacle.id)
        return None
    state = state or chain_state(model, q)
    grad = base_gradient(model, state, report)
    bound = dcbf_drift(report, obstacle) + params.class_k(report.value)
    return _row(model, -grad, bound, "base-dcbf", obstacle.id)


def _turn_sign(heading: np.ndarray, l: np.ndarray) -> float:
    cross = heading[0] * l[1] - heading[1] * l[0]
    return 1.0 if cross > 0 else -1.0


def base_aci_direction(
    model: RobotModel,
    q: JointConfig,
    report: DistanceReport,
    obstacle: ObstacleState,
    prior_tangents: list[np.ndarray],
    params: SafetyParams,
    state: ChainState | None = None,
) -> AciResult:
    """Pick the planar tangent of the base barrier that minimizes the base adaptive function."""
    state = state or chain_state(model, q)
    heading = np.array([np.cos(q.phi), np.sin(q.phi), 0.0])
    n = report.normal[:2]
    norm = float(np.hypot(*n))
    # an obstacle right above the lid has no planar direction; dodge sideways
    n = n / norm if norm > 1e-9 else -heading[:2]
    l_ccw = np.array([-n[1], n[0], 0.0])
    # candidate 0 is the counterclockwise one so ties resolve counterclockwise
    if _turn_sign(heading, l_ccw) < 0:
        l_ccw = -l_ccw
    candidates = np.array([l_ccw, -l_ccw])
    signs = np.array([1.0, -1.0])
    db_dphi = base_gradient(model, state, report)[1]
    v_ob = obstacle.velocity.copy()
    v_ob[2] = 0.0
    priors = np.asarray(prior_tangents, dtype=float).reshape(-1, 3)
    values = (
        -params.k_b1 * db_dphi * signs
        - params.k_b2 * (candidates @ priors.sum(axis=0))
        + params.k_b3 * np.abs(candidates @ v_ob)
    )
    i = _first_min(values)
    return AciResult(candidates[i].copy(), float(values[i]), candidates, values, "base", obstacle.id, i,
                     np.array([n[0], n[1], 0.0]), v_ob, priors, heading, float(db_dphi))


def base_aci_row(
    model: RobotModel,
    q: JointConfig,
    l_star: np.ndarray,
    report: DistanceReport,
    params: SafetyParams,
    obstacle_id: str | None = None,
) -> ConstraintRow:
    heading = np.array([np.cos(q.phi), np.sin(q.phi), 0.0])
    cos_tau = float(l_star @ heading)
    psi = min(params.d_b - report.value, abs(model.max_base_speed * cos_tau))
    coeffs = np.zeros(N_BASE)
    coeffs[0] = -cos_tau
    return _row(model, coeffs, -psi, "base-aci", obstacle_id)


# -- manipulator ------------------------------------------------------------


def arm_dcbf_row(
    model: RobotModel,
    q: JointConfig,
    report: DistanceReport,
    obstacle: ObstacleState,
    params: SafetyParams,
    state: ChainState | None = None,
) -> ConstraintRow | None:
    if report.degenerate:
        log.warning("obstacle %s center lies on link %s axis; DCBF row skipped", obstacle.id, report.link)
        return None
    state = state or chain_state(model, q)
    J = world_point_jacobian(model, state, report.link, report.point)
    bound = dcbf_drift(report, obstacle) + params.class_k(report.value)
    return _row(model, -(report.normal @ J), bound, "arm-dcbf", obstacle.id)


def tangent_circle(normal: np.ndarray, count: int) -> np.ndarray:
    """``count`` unit tangents orthogonal to ``normal``; index 0 is the most upward one."""
    n = normal / np.linalg.norm(normal)
    e1 = EZ - (EZ @ n) * n
    if np.linalg.norm(e1) < 1e-9:
        ex = np.array([1.0, 0.0, 0.0])
        e1 = ex - (ex @ n) * n
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    angles = 2.0 * np.pi * np.arange(count) / count
    return np.cos(angles)[:, None] * e1 + np.sin(angles)[:, None] * e2


def arm_aci_objective(candidates, obstacle_velocity, prior_tangents, params: SafetyParams) -> np.ndarray:
    priors = np.asarray(prior_tangents, dtype=float).reshape(-1, 3)
    return (
        -params.k_m1 * np.abs(candidates[:, 2])
        - params.k_m2 * (candidates @ priors.sum(axis=0))
        + params.k_m3 * np.abs(candidates @ obstacle_velocity)
    )


def arm_aci_direction(
    q: JointConfig,
    report: DistanceReport,
    obstacle: ObstacleState,
    prior_tangents: list[np.ndarray],
    params: SafetyParams,
) -> AciResult:
    candidates = tangent_circle(report.normal, int(params.n_tangent))
    values = arm_aci_objective(candidates, obstacle.velocity, prior_tangents, params)
    i = _first_min(values)
    return AciResult(candidates[i].copy(), float(values[i]), candidates, values, "arm", obstacle.id, i,
                     report.normal.copy(), obstacle.velocity.copy(),
                     np.asarray(prior_tangents, dtype=float).reshape(-1, 3))


def arm_aci_row(
    model: RobotModel,
    q: JointConfig,
    l_star: np.ndarray,
    report: DistanceReport,
    params: SafetyParams,
    state: ChainState | None = None,
    obstacle_id: str | None = None,
) -> ConstraintRow:
    state = state or chain_state(model, q)
    J = world_point_jacobian(model, state, report.link, report.point)
    psi = min(params.d_m - report.value, params.D_m)
    return _row(model, -(l_star @ J), -psi, "arm-aci", obstacle_id)


def _first_min(values: np.ndarray) -> int:
    """Lowest index whose value is within TIE_TOL of the minimum."""
    return int(np.flatnonzero(values <= values.min() + TIE_TOL)[0])


# -- internal safety --------------------------------------------------------


def joint_barrier(model: RobotModel, q: JointConfig) -> np.ndarray:
    """Joint-bound barrier value per joint (inf for unbounded joints)."""
    qv, lo, hi = q.q, model.lower, model.upper
    bounded = np.isfinite(lo) & np.isfinite(hi)
    out = np.full(model.n, np.inf)
    out[bounded] = (hi[bounded] - qv[bounded]) * (qv[bounded] - lo[bounded]) / (hi[bounded] - lo[bounded])
    return out


def joint_bound_rows(model: RobotModel, q: JointConfig, params: SafetyParams) -> list[ConstraintRow]:
    qv, lo, hi = q.q, model.lower, model.upper
    b = joint_barrier(model, q)
    rows = []
    for i in range(model.n):
        coeffs = np.zeros(i + 1)
        if np.isfinite(b[i]):
            coeffs[i] = -(hi[i] + lo[i] - 2.0 * qv[i]) / (hi[i] - lo[i])
            bound = params.gamma_jb * b[i]
        else:
            bound = np.inf  # virtual base joints are unbounded
        rows.append(_row(model, coeffs, bound, "joint-bound"))
    return rows


def reach_barrier(model: RobotModel, state: ChainState) -> float:
    planar = state.ee[:2, 3] - state.base[:2, 3]
    return float(model.max_reach**2 - planar @ planar)


def max_reach_row(
    model: RobotModel, q: JointConfig, params: SafetyParams, state: ChainState | None = None
) -> ConstraintRow:
    state = state or chain_state(model, q)
    J = extended_jacobian(model, q, state)[:3].copy()
    J[:, 0] -= state.base[:3, 0]  # the base position itself moves with d
    planar = np.array([*(state.ee[:2, 3] - state.base[:2, 3]), 0.0])
    grad = -2.0 * planar @ J
    return _row(model, -grad, params.gamma_mr * reach_barrier(model, state), "max-reach")


# -- Algorithm 1 --------------------------------------------------------------


@dataclass
class SafetyTrace:
    """Diagnostics filled by ``assemble_safety_constraints`` when requested."""

    base_reports: dict = field(default_factory=dict)
    arm_reports: dict = field(default_factory=dict)
    base_active: list = field(default_factory=list)
    arm_active: list = field(default_factory=list)
    aci: list = field(default_factory=list)
    priors: list = field(default_factory=list)  # prior tangents handed to each ACI call


def assemble_safety_constraints(
    model: RobotModel,
    q: JointConfig,
    obstacles: list[ObstacleState],
    params: SafetyParams,
    qdot_prev: np.ndarray | None = None,
    include_aci: bool = True,
    state: ChainState | None = None,
    trace: SafetyTrace | None = None,
) -> list[ConstraintRow]:
    """Build every safety row for one control cycle.

    Obstacles are processed in id order; tangents chosen for earlier
    obstacles feed the ACI objectives of later ones.  The relative speed in
    the operating-set test uses the previous cycle's joint rates.
    """
    state = state or chain_state(model, q)
    qdot_prev = np.zeros(model.n) if qdot_prev is None else np.asarray(qdot_prev, dtype=float)
    rows: list[ConstraintRow] = []
    base_priors: list[np.ndarray] = []
    arm_priors: list[np.ndarray] = []
    for ob in sorted(obstacles, key=lambda o: o.id):
        rep = base_distance(model, q, ob, state)
        v_point = base_point_jacobian(state, rep.point) @ qdot_prev[:N_BASE]
        speed = relative_speed(v_point, ob, planar=abs(rep.normal[2]) < 1e-12)
        if trace is not None:
            trace.base_reports[ob.id] = rep
        if operating_set_test(rep, ob, speed, params.k_ot, params.k_ro, params.ot_floor):
            row = base_dcbf_row(model, q, rep, ob, params, state)
            if row is not None:
                rows.append(row)
                if trace is not None:
                    trace.base_active.append(ob.id)
                if include_aci:
                    res = base_aci_direction(model, q, rep, ob, list(base_priors), params, state)
                    rows.append(base_aci_row(model, q, res.l_star, rep, params, ob.id))
                    if trace is not None:
                        trace.aci.append(res)
                        trace.priors.append(list(base_priors))
                    base_priors.append(res.l_star)

        rep = arm_distance(model, q, ob, params.softmin, state)
        k = rep.link
        v_point = world_point_jacobian(model, state, k, rep.point) @ qdot_prev[:k]
        speed = relative_speed(v_point, ob)
        if trace is not None:
            trace.arm_reports[ob.id] = rep
        if operating_set_test(rep, ob, speed, params.k_ot, params.k_ro, params.ot_floor):
            row = arm_dcbf_row(model, q, rep, ob, params, state)
            if row is not None:
                rows.append(row)
                if trace is not None:
                    trace.arm_active.append(ob.id)
                if include_aci:
                    res = arm_aci_direction(q, rep, ob, list(arm_priors), params)
                    rows.append(arm_aci_row(model, q, res.l_star, rep, params, state, ob.id))
                    if trace is not None:
                        trace.aci.append(res)
                        trace.priors.append(list(arm_priors))
                    arm_priors.append(res.l_star)

    rows.extend(joint_bound_rows(model, q, params))
    rows.append(max_reach_row(model, q, params, state))
    return rows

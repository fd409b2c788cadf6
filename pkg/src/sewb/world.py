"""Spherical obstacles, their motion scripts and robot-obstacle distances."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, softmax

from .kinematics import N_BASE, ChainState, JointConfig, RobotModel, chain_state

log = logging.getLogger(__name__)

FALLBACK_NORMAL = np.array([1.0, 0.0, 0.0])


@dataclass(frozen=True)
class ObstacleState:
    position: np.ndarray
    velocity: np.ndarray
    radius: float
    id: str = "ob"

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        v = np.asarray(self.velocity, dtype=float).reshape(3)
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(v))):
            raise ValueError("obstacle state must be finite")
        if not self.radius > 0:
            raise ValueError("obstacle radius must be positive")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "velocity", v)


# -- motion scripts -------------------------------------------------------


@dataclass(frozen=True)
class Static:
    position: tuple

    def __call__(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self.position, dtype=float), np.zeros(3)


@dataclass(frozen=True)
class ConstantVelocity:
    position: tuple  # position at t_start
    velocity: tuple
    t_start: float = 0.0

    def __call__(self, t):
        v = np.array(self.velocity, dtype=float)
        if t < self.t_start:
            return np.array(self.position, dtype=float), np.zeros(3)
        return np.array(self.position, dtype=float) + v * (t - self.t_start), v


@dataclass(frozen=True)
class Ballistic:
    """Thrown ball: held at ``position`` until ``t_start``, then free flight."""

    position: tuple
    velocity: tuple
    t_start: float = 0.0
    gravity: float = -9.81

    def __call__(self, t):
        if t < self.t_start:
            return np.array(self.position, dtype=float), np.zeros(3)
        tau = t - self.t_start
        g = np.array([0.0, 0.0, self.gravity])
        v0 = np.array(self.velocity, dtype=float)
        return np.array(self.position, dtype=float) + v0 * tau + 0.5 * g * tau**2, v0 + g * tau


@dataclass(frozen=True)
class Waypoints:
    times: tuple
    positions: tuple

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if len(times) < 1 or len(times) != len(self.positions):
            raise ValueError("waypoints need matching, non-empty times and positions")
        if np.any(np.diff(times) <= 0):
            raise ValueError("waypoint times must be strictly increasing")

    def __call__(self, t):
        times = np.asarray(self.times, dtype=float)
        pts = np.asarray(self.positions, dtype=float)
        if t <= times[0]:
            return pts[0].copy(), np.zeros(3)
        if t >= times[-1]:
            return pts[-1].copy(), np.zeros(3)
        i = int(np.searchsorted(times, t, side="right")) - 1
        span = times[i + 1] - times[i]
        v = (pts[i + 1] - pts[i]) / span
        return pts[i] + v * (t - times[i]), v


@dataclass(frozen=True)
class Oscillation:
    """Head of a pole swinging about ``pivot`` in the plane spanned by ``u`` and ``w``.

    The swing angle is ``center - amplitude * cos(omega * (t - t_start))``
    inside ``[t_start, t_end]`` and frozen outside it, so the head rests at
    ``center - amplitude`` before the window and passes ``center`` with
    speed ``length * amplitude * omega``.
    """

    pivot: tuple
    u: tuple
    w: tuple
    length: float
    center: float
    amplitude: float
    omega: float
    t_start: float
    t_end: float

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise ValueError("oscillation window must have t_end > t_start")

    def __call__(self, t):
        u = np.asarray(self.u, dtype=float)
        w = np.asarray(self.w, dtype=float)
        tau = min(max(t, self.t_start), self.t_end) - self.t_start
        theta = self.center - self.amplitude * np.cos(self.omega * tau)
        radial = np.cos(theta) * u + np.sin(theta) * w
        pos = np.asarray(self.pivot, dtype=float) + self.length * radial
        if self.t_start <= t <= self.t_end:
            theta_dot = self.amplitude * self.omega * np.sin(self.omega * tau)
            tangent = -np.sin(theta) * u + np.cos(theta) * w
            return pos, self.length * theta_dot * tangent
        return pos, np.zeros(3)


@dataclass(frozen=True)
class Obstacle:
    """Scripted sphere; ``floor`` drops it from the scene once it falls below that height."""

    id: str
    radius: float
    script: object
    floor: float | None = None

    def state(self, t: float) -> ObstacleState | None:
        pos, vel = self.script(t)
        if self.floor is not None and pos[2] < self.floor:
            return None
        return ObstacleState(pos, vel, self.radius, self.id)


def obstacles_at(obstacles: list[Obstacle], t: float) -> list[ObstacleState]:
    states = (ob.state(t) for ob in obstacles)
    return [s for s in states if s is not None]


# -- distances --------------------------------------------------------------


@dataclass
class DistanceReport:
    value: float
    point: np.ndarray  # closest point on the robot (world)
    normal: np.ndarray  # unit, from the obstacle toward the robot (gradient of b in the robot point)
    link: int | str  # "base" or global link index k
    raw: np.ndarray = field(default_factory=lambda: np.zeros(0))
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    normals: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    links: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    degenerate: bool = False
    penetrating: bool = False

    @property
    def hard_min(self) -> float:
        return float(self.raw.min()) if self.raw.size else self.value

    @property
    def is_base(self) -> bool:
        return self.link == "base"


def softmin(values, sharpness: float) -> float:
    values = np.asarray(values, dtype=float)
    if values.size == 1:
        return float(values[0])
    return float(-logsumexp(-sharpness * values) / sharpness)


def base_disc_center(model: RobotModel, state: ChainState) -> np.ndarray:
    return state.base[:3, 3] + model.base_disc_offset * state.base[:3, 0]


def base_distance(
    model: RobotModel, q: JointConfig, obstacle: ObstacleState, state: ChainState | None = None
) -> DistanceReport:
    """Clearance between the base body and the obstacle.

    The base is a vertical cylinder of radius ``base_radius`` from the floor
    to ``base_height``.  For obstacles centered below the top this is the
    planar disc distance; above the top the distance to the rim or lid is
    used instead, so spheres passing over the base are not mistaken for
    contacts.
    """
    state = state or chain_state(model, q)
    center = base_disc_center(model, state)
    diff = center[:2] - obstacle.position[:2]
    rho = float(np.hypot(*diff))
    R = model.base_radius
    dz = obstacle.position[2] - model.base_height
    degenerate = False
    if dz <= 0:
        degenerate = rho < 1e-12
        normal = FALLBACK_NORMAL.copy() if degenerate else np.array([diff[0] / rho, diff[1] / rho, 0.0])
        b = rho - R - obstacle.radius
        point = np.array([*(center[:2] - R * normal[:2]), max(obstacle.position[2], 0.0)])
    elif rho <= R:
        normal = np.array([0.0, 0.0, -1.0])
        b = dz - obstacle.radius
        point = np.array([obstacle.position[0], obstacle.position[1], model.base_height])
    else:
        rim = center[:2] - R * diff / rho
        point = np.array([rim[0], rim[1], model.base_height])
        gap = point - obstacle.position
        dist = float(np.linalg.norm(gap))
        normal = gap / dist
        b = dist - obstacle.radius
    return DistanceReport(
        value=b,
        point=point,
        normal=normal,
        link="base",
        raw=np.array([b]),
        weights=np.ones(1),
        normals=normal[None, :],
        links=np.zeros(1, dtype=int),
        points=point[None, :],
        degenerate=degenerate,
        penetrating=b < 0,
    )


def _capsule_arrays(model: RobotModel):
    cached = getattr(model, "_capsule_cache", None)
    if cached is None:
        links = np.array([c.link for c in model.capsules], dtype=int)
        a = np.array([c.a for c in model.capsules])
        b = np.array([c.b for c in model.capsules])
        r = np.array([c.radius for c in model.capsules])
        cached = (links, a, b, r)
        model._capsule_cache = cached
    return cached


def capsule_segments(model: RobotModel, state: ChainState):
    """World endpoints and radii of every link capsule."""
    links, a, b, r = _capsule_arrays(model)
    frames = state.frames[links - N_BASE - 1]
    R, p = frames[:, :3, :3], frames[:, :3, 3]
    wa = np.einsum("lij,lj->li", R, a) + p
    wb = np.einsum("lij,lj->li", R, b) + p
    return links, wa, wb, r


def segment_sphere(wa: np.ndarray, wb: np.ndarray, center: np.ndarray):
    """Closest points on segments (rows) to ``center`` and the center distances."""
    ab = wb - wa
    denom = np.einsum("ij,ij->i", ab, ab)
    t = np.einsum("ij,ij->i", center - wa, ab) / np.where(denom > 0, denom, 1.0)
    t = np.clip(np.where(denom > 0, t, 0.0), 0.0, 1.0)
    closest = wa + t[:, None] * ab
    diff = closest - center
    return closest, diff, np.linalg.norm(diff, axis=1)


def arm_distance(
    model: RobotModel,
    q: JointConfig,
    obstacle: ObstacleState,
    softmin_k: float,
    state: ChainState | None = None,
) -> DistanceReport:
    """Softmin clearance over all link capsules; the anchor point comes from the hard minimum."""
    if not softmin_k > 0:
        raise ValueError("softmin sharpness must be positive")
    state = state or chain_state(model, q)
    links, wa, wb, r = capsule_segments(model, state)
    closest, diff, norm = segment_sphere(wa, wb, obstacle.position)
    raw = norm - r - obstacle.radius
    degenerate = norm < 1e-12
    normals = np.where(degenerate[:, None], FALLBACK_NORMAL, diff / np.where(degenerate, 1.0, norm)[:, None])
    points = closest - r[:, None] * normals
    i = int(np.argmin(raw))
    b = softmin(raw, softmin_k)
    return DistanceReport(
        value=b,
        point=points[i],
        normal=normals[i],
        link=int(links[i]),
        raw=raw,
        weights=softmax(-softmin_k * raw),
        normals=normals,
        links=links,
        points=points,
        degenerate=bool(degenerate[i]),
        penetrating=bool(raw[i] < 0),
    )


def dcbf_drift(report: DistanceReport, obstacle: ObstacleState) -> float:
    """Rate of change of ``b`` caused by the obstacle motion alone.

    ``db/dxi = -normal`` for each candidate; the softmin weights combine
    the candidates so the value is the exact derivative of ``report.value``.
    """
    if report.degenerate:
        log.debug("degenerate distance report for %s: drift set to zero", obstacle.id)
        return 0.0
    return float(-(report.weights @ (report.normals @ obstacle.velocity)))


def operating_threshold(relative_speed: float, k_ot: float, k_ro: float, floor: float = 0.0) -> float:
    """``min(k_ot, k_ro * speed)``, never below ``floor`` so a resting robot keeps its nearby rows."""
    return min(k_ot, max(k_ro * relative_speed, floor))


def operating_set_test(
    report: DistanceReport,
    obstacle: ObstacleState,
    relative_speed: float,
    k_ot: float,
    k_ro: float,
    floor: float = 0.0,
) -> bool:
    """True when the obstacle is inside the operating region ``b <= T_ot``."""
    if not (k_ot > 0 and k_ro > 0):
        raise ValueError("k_ot and k_ro must be positive")
    return report.value <= operating_threshold(relative_speed, k_ot, k_ro, floor)


def relative_speed(point_velocity: np.ndarray, obstacle: ObstacleState, planar: bool = False) -> float:
    rel = np.asarray(point_velocity, dtype=float) - obstacle.velocity
    if planar:
        rel = rel[:2]
    return float(np.linalg.norm(rel))

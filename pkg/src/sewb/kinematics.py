"""Kinematics of a differential-drive base carrying a serial arm.

The base is described by two virtual joints ``(d, phi)``: ``d`` is the
distance travelled along the heading and ``phi`` the heading itself.  The
world pose ``(x, y, phi)`` is carried next to them because the forward
kinematics needs it.  All arm joints are revolute.

Joint indices follow the stacked vector ``q = (d, phi, q_arm...)``; when a
*link index* ``k`` is used it is the 1-based index of the joint the link is
attached to, so arm links have ``n_b + 1 <= k <= n``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np
import yaml
from scipy.spatial.transform import Rotation

N_BASE = 2
EZ = np.array([0.0, 0.0, 1.0])


class KinematicsError(ValueError):
    pass


def _homogeneous(rotation: np.ndarray, translation) -> np.ndarray:
    T = np.eye(4)
    T[:3, :3] = rotation
    T[:3, 3] = translation
    return T


def xyz_rpy(xyz=(0.0, 0.0, 0.0), rpy=(0.0, 0.0, 0.0)) -> np.ndarray:
    """4x4 transform from a translation and URDF-style roll/pitch/yaw."""
    R = Rotation.from_euler("xyz", rpy).as_matrix()
    return _homogeneous(R, np.asarray(xyz, dtype=float))


def axis_rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation as a 4x4 transform."""
    c, s = np.cos(angle), np.sin(angle)
    x, y, z = axis
    T = np.eye(4)
    if x == 0.0 and y == 0.0 and z == 1.0:
        T[0, 0], T[0, 1], T[1, 0], T[1, 1] = c, -s, s, c
        return T
    C = 1.0 - c
    T[:3, :3] = (
        (c + x * x * C, x * y * C - z * s, x * z * C + y * s),
        (y * x * C + z * s, c + y * y * C, y * z * C - x * s),
        (z * x * C - y * s, z * y * C + x * s, c + z * z * C),
    )
    return T


def planar_pose(x: float, y: float, phi: float) -> np.ndarray:
    c, s = np.cos(phi), np.sin(phi)
    return np.array(
        [[c, -s, 0.0, x], [s, c, 0.0, y], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]
    )


@dataclass(frozen=True)
class Transform:
    """Rigid transform with a 3x3 rotation and a translation in meters."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        p = np.asarray(self.translation, dtype=float)
        if R.shape != (3, 3) or p.shape != (3,):
            raise KinematicsError("rotation must be 3x3 and translation a 3-vector")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(p))):
            raise KinematicsError("transform entries must be finite")
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise KinematicsError("rotation is not orthonormal with det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", p)

    @classmethod
    def identity(cls) -> "Transform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "Transform":
        return cls(T[:3, :3], T[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        return _homogeneous(self.rotation, self.translation)

    def __matmul__(self, other: "Transform") -> "Transform":
        return Transform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Transform":
        Rt = self.rotation.T
        return Transform(Rt, -Rt @ self.translation)


@dataclass(frozen=True)
class JointConfig:
    """Joint state of the mobile manipulator.

    ``d`` and ``phi`` are the virtual base joints; ``x`` and ``y`` are the
    world position of the base rotation center, integrated as a unicycle.
    """

    d: float
    phi: float
    arm: np.ndarray
    x: float = 0.0
    y: float = 0.0

    def __post_init__(self):
        arm = np.array(self.arm, dtype=float).reshape(-1)
        object.__setattr__(self, "arm", arm)
        vals = (self.d, self.phi, self.x, self.y)
        if not (np.all(np.isfinite(arm)) and np.all(np.isfinite(vals))):
            raise KinematicsError("joint configuration must be finite")

    @property
    def n(self) -> int:
        return N_BASE + self.arm.size

    @property
    def q(self) -> np.ndarray:
        return np.concatenate(([self.d, self.phi], self.arm))

    @property
    def base_pose(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.phi)

    def advance(self, qdot: np.ndarray, dt: float) -> "JointConfig":
        """Explicit Euler step; the base moves as a unicycle."""
        qdot = np.asarray(qdot, dtype=float)
        if qdot.shape != (self.n,):
            raise KinematicsError(f"rate vector must have length {self.n}")
        step = qdot[0] * dt
        return JointConfig(
            d=self.d + step,
            phi=self.phi + qdot[1] * dt,
            arm=self.arm + qdot[N_BASE:] * dt,
            x=self.x + step * np.cos(self.phi),
            y=self.y + step * np.sin(self.phi),
        )

    def perturbed(self, index: int, h: float) -> "JointConfig":
        """Move a single joint by ``h`` along its own flow (used for finite differences)."""
        if index == 0:
            return replace(
                self,
                d=self.d + h,
                x=self.x + h * np.cos(self.phi),
                y=self.y + h * np.sin(self.phi),
            )
        if index == 1:
            return replace(self, phi=self.phi + h)
        arm = self.arm.copy()
        arm[index - N_BASE] += h
        return replace(self, arm=arm)

    def with_arm(self, arm) -> "JointConfig":
        return replace(self, arm=np.asarray(arm, dtype=float))


@dataclass(frozen=True)
class ArmJoint:
    name: str
    origin: np.ndarray  # 4x4 fixed transform from the parent frame
    axis: np.ndarray  # unit axis in the joint frame


@dataclass(frozen=True)
class Capsule:
    link: int  # global 1-based link index k
    a: np.ndarray
    b: np.ndarray
    radius: float


@dataclass
class RobotModel:
    name: str
    joints: list[ArmJoint]
    mount: np.ndarray
    ee_offset: np.ndarray
    lower: np.ndarray  # length n, base entries are -inf
    upper: np.ndarray
    max_velocity: np.ndarray  # length n
    base_radius: float
    capsules: list[Capsule]
    max_reach: float
    base_disc_offset: float = 0.0
    base_height: float = np.inf  # top of the base body; inf gives a purely planar base
    source: str | None = field(default=None, compare=False)

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        self.max_velocity = np.asarray(self.max_velocity, dtype=float)
        n = self.n
        for name in ("lower", "upper", "max_velocity"):
            if getattr(self, name).shape != (n,):
                raise KinematicsError(f"{name} must have length {n}")
        if not np.all(self.lower < self.upper):
            raise KinematicsError("every joint needs lower < upper")
        if not np.all(self.max_velocity > 0):
            raise KinematicsError("velocity limits must be positive")
        if not self.base_height > 0:
            raise KinematicsError("base height must be positive")
        if self.base_radius <= 0 or self.max_reach <= 0:
            raise KinematicsError("base radius and max reach must be positive")
        for c in self.capsules:
            if c.radius <= 0:
                raise KinematicsError("capsule radii must be positive")
            if not N_BASE + 1 <= c.link <= n:
                raise KinematicsError(f"capsule attached to invalid link {c.link}")

    @property
    def n_arm(self) -> int:
        return len(self.joints)

    @property
    def n(self) -> int:
        return N_BASE + len(self.joints)

    @property
    def max_base_speed(self) -> float:
        return float(self.max_velocity[0])


class ChainState(NamedTuple):
    """Forward-kinematics snapshot shared by the Jacobian helpers."""

    base: np.ndarray  # 4x4 world pose of the base rotation center
    frames: np.ndarray  # (n_arm, 4, 4) world pose of each arm link frame
    ee: np.ndarray  # 4x4 end-effector pose
    axes: np.ndarray  # (n_arm, 3) world joint axes
    origins: np.ndarray  # (n_arm, 3) world joint origins


def chain_state(model: RobotModel, q: JointConfig) -> ChainState:
    if q.arm.size != model.n_arm:
        raise KinematicsError(f"expected {model.n_arm} arm joints, got {q.arm.size}")
    base = planar_pose(q.x, q.y, q.phi)
    T = base @ model.mount
    frames = np.empty((model.n_arm, 4, 4))
    axes = np.empty((model.n_arm, 3))
    for i, (joint, angle) in enumerate(zip(model.joints, q.arm)):
        T = T @ joint.origin @ axis_rotation(joint.axis, angle)
        frames[i] = T
        axes[i] = T[:3, :3] @ joint.axis
    ee = T @ model.ee_offset
    return ChainState(base, frames, ee, axes, frames[:, :3, 3].copy())


def forward_kinematics(model: RobotModel, q: JointConfig) -> Transform:
    return Transform.from_matrix(chain_state(model, q).ee)


def base_point_jacobian(state: ChainState, point: np.ndarray) -> np.ndarray:
    """Translational velocity of a world point rigidly attached to the base frame."""
    heading = state.base[:3, 0]
    return np.column_stack((heading, np.cross(EZ, point - state.base[:3, 3])))


def extended_jacobian(model: RobotModel, q: JointConfig, state: ChainState | None = None) -> np.ndarray:
    """6 x n map from (d_dot, phi_dot, arm rates) to the world end-effector twist."""
    state = state or chain_state(model, q)
    p_e = state.ee[:3, 3]
    J = np.zeros((6, model.n))
    J[:3, :N_BASE] = base_point_jacobian(state, p_e)
    J[5, 1] = 1.0
    J[:3, N_BASE:] = np.cross(state.axes, p_e - state.origins).T
    J[3:, N_BASE:] = state.axes.T
    return J


def world_point_jacobian(model: RobotModel, state: ChainState, k: int, point: np.ndarray) -> np.ndarray:
    """3 x k translational Jacobian of a world point rigidly attached to link ``k``."""
    if not N_BASE + 1 <= k <= model.n:
        raise KinematicsError(f"link index {k} outside [{N_BASE + 1}, {model.n}]")
    m = k - N_BASE
    J = np.empty((3, k))
    J[:, :N_BASE] = base_point_jacobian(state, point)
    J[:, N_BASE:] = np.cross(state.axes[:m], point - state.origins[:m]).T
    return J


def point_jacobian(
    model: RobotModel, q: JointConfig, k: int, rho, state: ChainState | None = None
) -> np.ndarray:
    """Translational Jacobian of a point given in the frame of link ``k``.

    Only joints ``1..k`` move the point, so the result is ``3 x k``.
    """
    if not N_BASE + 1 <= k <= model.n:
        raise KinematicsError(f"link index {k} outside [{N_BASE + 1}, {model.n}]")
    state = state or chain_state(model, q)
    frame = state.frames[k - N_BASE - 1]
    point = frame[:3, :3] @ np.asarray(rho, dtype=float) + frame[:3, 3]
    return world_point_jacobian(model, state, k, point)


def arm_jacobian(model: RobotModel, q: JointConfig, state: ChainState | None = None) -> np.ndarray:
    return extended_jacobian(model, q, state)[:, N_BASE:]


def pose_error(current: Transform, goal: Transform) -> np.ndarray:
    """World-frame error (goal - current) as translation plus rotation vector."""
    err = np.empty(6)
    err[:3] = goal.translation - current.translation
    R_err = goal.rotation @ current.rotation.T
    err[3:] = Rotation.from_matrix(R_err).as_rotvec()
    return err


def manipulability(model: RobotModel, q: JointConfig, state: ChainState | None = None) -> float:
    J = arm_jacobian(model, q, state)
    return float(np.sqrt(max(np.linalg.det(J @ J.T), 0.0)))


def _arm_hessian(J: np.ndarray) -> np.ndarray:
    """Derivatives of the arm Jacobian columns: H[j] = dJ/dq_j (revolute joints)."""
    nm = J.shape[1]
    Jv, w = J[:3].T, J[3:].T  # (nm, 3)
    H = np.zeros((nm, 6, nm))
    for j in range(nm):
        lin = np.empty((nm, 3))
        lin[j:] = np.cross(w[j], Jv[j:])
        lin[:j] = np.cross(w[:j], Jv[j])
        H[j, :3] = lin.T
        H[j, 3:, j + 1 :] = np.cross(w[j], w[j + 1 :]).T
    return H


def manipulability_gradient(
    model: RobotModel, q: JointConfig, state: ChainState | None = None
) -> tuple[np.ndarray, bool]:
    """Gradient of sqrt(det(J J^T)) over the arm joints and a singularity flag."""
    J = arm_jacobian(model, q, state)
    A = J @ J.T
    det = np.linalg.det(A)
    if det <= 1e-12:
        return np.zeros(model.n_arm), True
    m = np.sqrt(det)
    B = np.linalg.solve(A, J)
    H = _arm_hessian(J)
    return m * np.einsum("ab,jab->j", B, H), False


# -- model files -----------------------------------------------------------

DEFAULT_MODEL = Path(__file__).parent / "data" / "panda_c100.yaml"


def _vec(value, size: int, what: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.shape != (size,):
        raise KinematicsError(f"{what}: expected {size} numbers")
    return arr


def model_from_dict(data: dict, source: str | None = None) -> RobotModel:
    """Build a model from the documented key-value schema (see README)."""
    try:
        base = data["base"]
        arm = data["arm"]
        joints, lower, upper, vmax = [], [], [], []
        for spec in arm["joints"]:
            axis = _vec(spec.get("axis", (0, 0, 1)), 3, "axis")
            axis = axis / np.linalg.norm(axis)
            origin = xyz_rpy(_vec(spec.get("xyz", (0, 0, 0)), 3, "xyz"), _vec(spec.get("rpy", (0, 0, 0)), 3, "rpy"))
            joints.append(ArmJoint(spec["name"], origin, axis))
            lo, hi = spec["limits"]
            lower.append(lo)
            upper.append(hi)
            vmax.append(spec["max_velocity"])
        ee = arm.get("ee", {})
        mount = data.get("mount", {})
        capsules = [
            Capsule(
                link=N_BASE + int(c["link"]),
                a=_vec(c["a"], 3, "capsule a"),
                b=_vec(c["b"], 3, "capsule b"),
                radius=float(c["radius"]),
            )
            for c in data["capsules"]
        ]
        return RobotModel(
            name=str(data.get("name", "robot")),
            joints=joints,
            mount=xyz_rpy(mount.get("xyz", (0, 0, 0)), mount.get("rpy", (0, 0, 0))),
            ee_offset=xyz_rpy(ee.get("xyz", (0, 0, 0)), ee.get("rpy", (0, 0, 0))),
            lower=np.array([-np.inf, -np.inf, *lower]),
            upper=np.array([np.inf, np.inf, *upper]),
            max_velocity=np.array([base["max_linear_speed"], base["max_angular_speed"], *vmax]),
            base_radius=float(base["radius"]),
            base_disc_offset=float(base.get("disc_offset", 0.0)),
            base_height=float(base.get("height", np.inf)),
            capsules=capsules,
            max_reach=float(data["max_reach"]),
            source=source,
        )
    except (KeyError, TypeError) as exc:
        raise KinematicsError(f"malformed robot model: {exc!r}") from exc


def load_model(path: str | Path | None = None) -> RobotModel:
    path = Path(path) if path is not None else DEFAULT_MODEL
    with open(path) as fh:
        data = yaml.safe_load(fh)
    return model_from_dict(data, source=str(path))

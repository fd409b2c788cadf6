"""Scenario files: schema, validation, overrides and the run summary.

A scenario is a YAML mapping tagged ``schema: sewb-scenario/1``.  Every
level is checked against the known keys, defaults are filled in, and the
normalized mapping is what gets hashed, so two files that differ only in
spelled-out defaults describe the same run.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .controller import MODES, ControllerParams
from .kinematics import JointConfig, RobotModel, forward_kinematics, load_model, xyz_rpy
from .safety import SafetyParams
from .sim import Goal, SimSummary
from .world import Ballistic, ConstantVelocity, Obstacle, Oscillation, Static, Waypoints

SCHEMA_ID = "sewb-scenario/1"
BUNDLED = Path(__file__).parent / "data" / "scenarios"
MODELS = Path(__file__).parent / "data"


class ScenarioError(ValueError):
    pass


# -- schema -------------------------------------------------------------------

_SAFETY_KEYS = {f.name: f.default for f in fields(SafetyParams)}
_CONTROLLER_KEYS = {f.name: f.default for f in fields(ControllerParams) if f.name != "safety"}

_MOTIONS = {
    "static": (Static, {"position": None}),
    "constant_velocity": (ConstantVelocity, {"position": None, "velocity": None, "t_start": 0.0}),
    "ballistic": (Ballistic, {"position": None, "velocity": None, "t_start": 0.0, "gravity": -9.81}),
    "waypoints": (Waypoints, {"times": None, "positions": None}),
    "oscillation": (
        Oscillation,
        {
            "pivot": None,
            "u": None,
            "w": None,
            "length": None,
            "center": None,
            "amplitude": None,
            "omega": None,
            "t_start": 0.0,
            "t_end": None,
        },
    ),
}

_TOP = {
    "schema": None,
    "id": None,
    "description": "",
    "robot": "panda_c100",
    "dt": 0.01,
    "horizon": 30.0,
    "seed": 0,
    "start": None,
    "goals": None,
    "goal_speed": None,
    "stop_on_success": True,
    "tolerance": {},
    "obstacles": [],
    "random_obstacles": None,
    "controller": {},
    "output": {},
}
_START = {"x": 0.0, "y": 0.0, "phi": 0.0, "arm": None}
_GOAL = {"xyz": None, "rpy": None, "payload": None}
_TOL = {"position": 0.02, "rotation": 0.05, "dwell": 0.5}
_OBSTACLE = {"id": None, "radius": None, "floor": None, "motion": None}
_RANDOM = {"count": None, "x": None, "y": None, "z": None, "radius": None, "keep_out": [], "min_gap": 0.0}
_KEEP_OUT = {"center": None, "radius": None}
_OUTPUT = {"trace": None, "summary": None}

# short names accepted by ``--set``
ALIASES = {k: f"controller.safety.{k}" for k in _SAFETY_KEYS}
ALIASES.update({k: f"controller.{k}" for k in _CONTROLLER_KEYS})


def _fill(raw, spec: dict, where: str) -> dict:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ScenarioError(f"{where}: expected a mapping")
    unknown = sorted(set(raw) - set(spec))
    if unknown:
        raise ScenarioError(f"{where}: unknown keys {unknown}")
    out = {}
    for key, default in spec.items():
        if key in raw:
            out[key] = raw[key]
        elif default is None and key not in _OPTIONAL:
            raise ScenarioError(f"{where}: missing required key {key!r}")
        else:
            out[key] = copy.deepcopy(default)
    return out


_OPTIONAL = {"rpy", "payload", "floor", "goal_speed", "random_obstacles", "trace", "summary"}


def _num(value, where: str, positive=False, allow_none=False) -> float | None:
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"{where}: expected a number, got {value!r}")
    value = float(value)
    if not np.isfinite(value):
        raise ScenarioError(f"{where}: must be finite")
    if positive and value <= 0:
        raise ScenarioError(f"{where}: must be positive")
    return value


def _vec(value, size, where: str) -> list[float]:
    if not isinstance(value, (list, tuple)) or len(value) != size:
        raise ScenarioError(f"{where}: expected a list of {size} numbers")
    return [_num(v, where) for v in value]


def normalize(raw: dict) -> dict:
    """Validate a raw scenario mapping and return it with every default spelled out."""
    if not isinstance(raw, dict):
        raise ScenarioError("scenario must be a mapping")
    sc = _fill(raw, _TOP, "scenario")
    if sc["schema"] != SCHEMA_ID:
        raise ScenarioError(f"schema must be {SCHEMA_ID!r}, got {sc['schema']!r}")
    if not isinstance(sc["id"], str) or not sc["id"]:
        raise ScenarioError("id must be a non-empty string")
    if not isinstance(sc["robot"], str):
        raise ScenarioError("robot must be a model name or path")
    if not isinstance(sc["description"], str):
        raise ScenarioError("description must be text")
    sc["dt"] = _num(sc["dt"], "dt", positive=True)
    sc["horizon"] = _num(sc["horizon"], "horizon", positive=True)
    if isinstance(sc["seed"], bool) or not isinstance(sc["seed"], int):
        raise ScenarioError("seed must be an integer")
    if not isinstance(sc["stop_on_success"], bool):
        raise ScenarioError("stop_on_success must be true or false")
    sc["goal_speed"] = _num(sc["goal_speed"], "goal_speed", positive=True, allow_none=True)

    st = _fill(sc["start"], _START, "start")
    for k in ("x", "y", "phi"):
        st[k] = _num(st[k], f"start.{k}")
    if not isinstance(st["arm"], list) or not st["arm"]:
        raise ScenarioError("start.arm: expected a list of joint angles")
    st["arm"] = [_num(a, "start.arm") for a in st["arm"]]
    sc["start"] = st

    if not isinstance(sc["goals"], list) or not sc["goals"]:
        raise ScenarioError("goals: expected a non-empty list")
    goals = []
    for i, g in enumerate(sc["goals"]):
        g = _fill(g, _GOAL, f"goals[{i}]")
        g["xyz"] = _vec(g["xyz"], 3, f"goals[{i}].xyz")
        if g["rpy"] is not None:
            g["rpy"] = _vec(g["rpy"], 3, f"goals[{i}].rpy")
        if g["payload"] not in (None, "attach", "detach"):
            raise ScenarioError(f"goals[{i}].payload must be attach or detach")
        goals.append(g)
    sc["goals"] = goals

    tol = _fill(sc["tolerance"], _TOL, "tolerance")
    sc["tolerance"] = {k: _num(v, f"tolerance.{k}", positive=k != "dwell") for k, v in tol.items()}
    if sc["tolerance"]["dwell"] < 0:
        raise ScenarioError("tolerance.dwell must be nonnegative")

    if not isinstance(sc["obstacles"], list):
        raise ScenarioError("obstacles: expected a list")
    obs, ids = [], set()
    for i, o in enumerate(sc["obstacles"]):
        o = _fill(o, _OBSTACLE, f"obstacles[{i}]")
        if not isinstance(o["id"], str) or o["id"] in ids:
            raise ScenarioError(f"obstacles[{i}].id must be a unique string")
        ids.add(o["id"])
        o["radius"] = _num(o["radius"], f"obstacles[{i}].radius", positive=True)
        o["floor"] = _num(o["floor"], f"obstacles[{i}].floor", allow_none=True)
        o["motion"] = _motion(o["motion"], f"obstacles[{i}].motion")
        obs.append(o)
    sc["obstacles"] = obs

    if sc["random_obstacles"] is not None:
        r = _fill(sc["random_obstacles"], _RANDOM, "random_obstacles")
        if isinstance(r["count"], bool) or not isinstance(r["count"], int) or r["count"] < 0:
            raise ScenarioError("random_obstacles.count must be a nonnegative integer")
        for k in ("x", "y", "z", "radius"):
            lo, hi = _vec(r[k], 2, f"random_obstacles.{k}")
            if hi < lo:
                raise ScenarioError(f"random_obstacles.{k}: empty range")
            r[k] = [lo, hi]
        if r["radius"][0] <= 0:
            raise ScenarioError("random_obstacles.radius must be positive")
        r["keep_out"] = [_keep_out(k, i) for i, k in enumerate(r["keep_out"] or [])]
        r["min_gap"] = _num(r["min_gap"], "random_obstacles.min_gap")
        if r["min_gap"] < 0:
            raise ScenarioError("random_obstacles.min_gap must be nonnegative")
        sc["random_obstacles"] = r

    sc["controller"] = _controller(sc["controller"])
    out = _fill(sc["output"], _OUTPUT, "output")
    for k, v in out.items():
        if v is not None and not isinstance(v, str):
            raise ScenarioError(f"output.{k} must be a path")
    sc["output"] = out
    # build once so every semantic error surfaces at validation time
    _params(sc["controller"])
    for o in sc["obstacles"]:
        _script(o["motion"], f"obstacle {o['id']}")
    return sc


def _keep_out(raw, i):
    k = _fill(raw, _KEEP_OUT, f"random_obstacles.keep_out[{i}]")
    return {"center": _vec(k["center"], 2, "keep_out.center"), "radius": _num(k["radius"], "keep_out.radius", True)}


def _motion(raw, where):
    if not isinstance(raw, dict) or "type" not in raw:
        raise ScenarioError(f"{where}: expected a mapping with a type")
    kind = raw["type"]
    if kind not in _MOTIONS:
        raise ScenarioError(f"{where}: unknown motion type {kind!r}")
    body = {k: v for k, v in raw.items() if k != "type"}
    spec = _MOTIONS[kind][1]
    m = _fill(body, spec, where)
    for key, value in m.items():
        if key in ("position", "velocity", "pivot", "u", "w"):
            m[key] = _vec(value, 3, f"{where}.{key}")
        elif key == "times":
            if not isinstance(value, list) or not value:
                raise ScenarioError(f"{where}.times: expected a list")
            m[key] = [_num(t, f"{where}.times") for t in value]
        elif key == "positions":
            if not isinstance(value, list) or not value:
                raise ScenarioError(f"{where}.positions: expected a list")
            m[key] = [_vec(p, 3, f"{where}.positions") for p in value]
        else:
            m[key] = _num(value, f"{where}.{key}")
    return {"type": kind, **m}


def _script(motion: dict, where: str):
    cls = _MOTIONS[motion["type"]][0]
    args = {k: (tuple(tuple(x) if isinstance(x, list) else x for x in v) if isinstance(v, list) else v)
            for k, v in motion.items() if k != "type"}
    try:
        return cls(**args)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: {exc}") from exc


def _controller(raw) -> dict:
    spec = dict(_CONTROLLER_KEYS)
    spec["safety"] = {}
    c = _fill(raw, spec, "controller")
    c["safety"] = _fill(c["safety"], dict(_SAFETY_KEYS), "controller.safety")
    if c["mode"] not in MODES:
        raise ScenarioError(f"controller.mode must be one of {MODES}")
    for k, v in c.items():
        if k == "p_servo":
            c[k] = _vec(list(v), 6, "controller.p_servo")
        elif k == "qp_max_iter":
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ScenarioError("controller.qp_max_iter must be a positive integer")
        elif k not in ("mode", "safety"):
            c[k] = _num(v, f"controller.{k}")
    for k, v in c["safety"].items():
        if k == "n_tangent":
            if isinstance(v, bool) or not isinstance(v, int):
                raise ScenarioError("controller.safety.n_tangent must be an integer")
        else:
            c["safety"][k] = _num(v, f"controller.safety.{k}")
    return c


def _params(c: dict) -> ControllerParams:
    try:
        safety = SafetyParams(**c["safety"])
        rest = {k: v for k, v in c.items() if k != "safety"}
        return ControllerParams(**rest, safety=safety)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"controller: {exc}") from exc


# -- overrides ----------------------------------------------------------------


def apply_override(raw: dict, key: str, value) -> dict:
    """Set a dotted key (or a short alias such as ``d_b``) in a copy of ``raw``."""
    raw = copy.deepcopy(raw)
    path = ALIASES.get(key, key).split(".")
    node = raw
    for part in path[:-1]:
        if isinstance(node, list):
            try:
                node = node[int(part)]
            except (ValueError, IndexError) as exc:
                raise ScenarioError(f"--set {key}: bad list index {part!r}") from exc
            continue
        nxt = node.get(part)
        if nxt is None:
            nxt = node[part] = {}
        node = nxt
    last = path[-1]
    if isinstance(node, list):
        try:
            node[int(last)] = value
        except (ValueError, IndexError) as exc:
            raise ScenarioError(f"--set {key}: bad list index {last!r}") from exc
    elif isinstance(node, dict):
        node[last] = value
    else:
        raise ScenarioError(f"--set {key}: cannot descend into a scalar")
    return raw


def parse_assignment(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ScenarioError(f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), yaml.safe_load(value)


# -- loading ------------------------------------------------------------------


@dataclass
class ScenarioConfig:
    id: str
    model: RobotModel
    start: JointConfig
    goals: list
    goal_speed: float | None
    stop_on_success: bool
    obstacles: list
    controller: ControllerParams
    dt: float
    horizon: float
    tol_pos: float
    tol_rot: float
    dwell: float
    seed: int
    output: dict
    data: dict = field(repr=False, default_factory=dict)  # normalized mapping
    source: str | None = None

    @property
    def mode(self) -> str:
        return self.controller.mode

    @property
    def param_hash(self) -> str:
        return parameter_hash(self.data)


def parameter_hash(data: dict) -> str:
    effective = {k: v for k, v in data.items() if k not in ("output", "description")}
    text = json.dumps(effective, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def resolve_path(name: str | Path) -> Path:
    """A scenario file path, or the name of a bundled scenario."""
    p = Path(name)
    if p.exists():
        return p
    bundled = BUNDLED / f"{name}.yaml"
    if bundled.exists():
        return bundled
    raise ScenarioError(f"no scenario file or bundled scenario named {str(name)!r}")


def read_raw(name: str | Path) -> dict:
    path = resolve_path(name)
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path}: not valid YAML ({exc})") from exc
    if not isinstance(raw, dict):
        raise ScenarioError(f"{path}: scenario must be a mapping")
    return raw


def _model(name: str) -> RobotModel:
    path = Path(name)
    if not path.exists():
        path = MODELS / f"{name}.yaml"
    if not path.exists():
        raise ScenarioError(f"unknown robot model {name!r}")
    try:
        return load_model(path)
    except (ValueError, OSError) as exc:
        raise ScenarioError(f"robot model {name!r}: {exc}") from exc


def random_field(spec: dict, seed: int) -> list[dict]:
    """Static spheres drawn uniformly in a box, rejecting draws inside the keep-out discs
    or closer than ``min_gap`` (planar, surface to surface) to an earlier sphere."""
    rng = np.random.default_rng(seed)
    out = []
    tries = 0
    while len(out) < spec["count"]:
        tries += 1
        if tries > 1000 * max(spec["count"], 1):
            raise ScenarioError("random_obstacles: keep-out regions and min_gap leave no room")
        p = [rng.uniform(*spec[k]) for k in ("x", "y", "z")]
        r = float(rng.uniform(*spec["radius"]))
        if any(np.hypot(p[0] - k["center"][0], p[1] - k["center"][1]) < k["radius"] + r for k in spec["keep_out"]):
            continue
        gap = spec.get("min_gap", 0.0)
        if any(np.hypot(p[0] - o["motion"]["position"][0], p[1] - o["motion"]["position"][1]) < gap + r + o["radius"]
               for o in out):
            continue
        out.append({"id": f"rand{len(out):02d}", "radius": r, "floor": None,
                    "motion": {"type": "static", "position": [float(v) for v in p]}})
    return out


def build(data: dict, source: str | None = None) -> ScenarioConfig:
    """Turn a normalized mapping into runnable objects."""
    model = _model(data["robot"])
    st = data["start"]
    if len(st["arm"]) != model.n_arm:
        raise ScenarioError(f"start.arm: expected {model.n_arm} joint angles")
    start = JointConfig(0.0, st["phi"], st["arm"], st["x"], st["y"])
    lo, hi = model.lower, model.upper
    if np.any(start.q < lo) or np.any(start.q > hi):
        raise ScenarioError("start configuration violates joint limits")
    start_rot = forward_kinematics(model, start).rotation
    goals = []
    for g in data["goals"]:
        rot = start_rot if g["rpy"] is None else xyz_rpy((0, 0, 0), g["rpy"])[:3, :3]
        goals.append(Goal(np.array(g["xyz"], dtype=float), rot, g["payload"]))
    specs = list(data["obstacles"])
    if data["random_obstacles"] is not None:
        specs += random_field(data["random_obstacles"], data["seed"])
    obstacles = [
        Obstacle(o["id"], o["radius"], _script(o["motion"], o["id"]), o["floor"]) for o in specs
    ]
    if len({o.id for o in obstacles}) != len(obstacles):
        raise ScenarioError("obstacle ids must be unique")
    tol = data["tolerance"]
    return ScenarioConfig(
        id=data["id"],
        model=model,
        start=start,
        goals=goals,
        goal_speed=data["goal_speed"],
        stop_on_success=data["stop_on_success"],
        obstacles=obstacles,
        controller=_params(data["controller"]),
        dt=data["dt"],
        horizon=data["horizon"],
        tol_pos=tol["position"],
        tol_rot=tol["rotation"],
        dwell=tol["dwell"],
        seed=data["seed"],
        output=data["output"],
        data=data,
        source=source,
    )


def load_scenario(
    name: str | Path, overrides: list[tuple[str, object]] = (), mode: str | None = None
) -> ScenarioConfig:
    raw = read_raw(name)
    for key, value in overrides:
        raw = apply_override(raw, key, value)
    if mode is not None:
        raw = apply_override(raw, "controller.mode", mode)
    return build(normalize(raw), str(resolve_path(name)))


def dump(data: dict) -> str:
    return yaml.safe_dump(data, sort_keys=False)


# -- run summary --------------------------------------------------------------


@dataclass
class RunSummary:
    scenario: str
    mode: str
    param_hash: str
    sim: SimSummary

    @property
    def exit_code(self) -> int:
        if self.sim.safety_violation:
            return 3
        return 0 if self.sim.success else 2

    def items(self) -> list[tuple[str, object]]:
        return [("scenario", self.scenario), ("mode", self.mode), ("param_hash", self.param_hash)] + list(
            self.sim.deterministic_items()
        ) + [("exit_code", self.exit_code)]

    def timing_items(self) -> list[tuple[str, object]]:
        return [("mean_solve_ms", self.sim.mean_solve_ms), ("max_solve_ms", self.sim.max_solve_ms)]

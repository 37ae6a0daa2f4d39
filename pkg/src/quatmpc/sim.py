"""Ground-truth simulation: environments, scenarios, run logs and Monte Carlo trials.

The plant integrates the SRB vector field with RK4 at the physics rate; the
controller sees the true state at its own (slower) tick rate and its
control is held constant in between.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import _kernels, costs, dynamics, quat
from .costs import ConstraintSet, CostWeights
from .dynamics import FOOT_FORCE, REACTION_WHEEL, RobotModel
from .euler import EulerMpc
from .exceptions import ConfigError, PenetrationFault
from .ilqr import SolverSettings
from .mpc import GaitSchedule, MpcConfig, QuaternionMpc, VelocityCommand, foothold_heuristic

log = logging.getLogger(__name__)

SCENARIO_FORMAT = "quatmpc-scenario/1"
SCENARIO_DIR = Path(__file__).parent / "data" / "scenarios"
PENETRATION_LIMIT = 0.05
CONTACT_TOL = 0.02
CONTROLLERS = ("quaternion", "euler")


# ---------------------------------------------------------------------------
# environment and physics


@dataclass(frozen=True)
class Environment:
    """Contact geometry.

    ``flat``: ground plane ``z = 0``.  ``walls``: vertical walls at
    ``y = +-half_width`` with normals pointing into the gap (ground still
    present).  ``airborne``: no contact forces at all; the ground is kept
    only to detect touchdown.
    """

    kind: str = "flat"
    half_width: float = 0.2
    mu: float = 0.6

    def __post_init__(self):
        if self.kind not in ("flat", "walls", "airborne"):
            raise ConfigError("environment.kind", f"unknown environment {self.kind!r}")
        if not self.mu > 0:
            raise ConfigError("environment.mu", "must be positive")
        if self.kind == "walls" and not self.half_width > 0:
            raise ConfigError("environment.half_width", "must be positive")

    def normals(self, feet):
        feet = np.atleast_2d(feet)
        if self.kind == "walls":
            return np.array([[0.0, -np.sign(p[1]) or -1.0, 0.0] for p in feet])
        return np.tile([0.0, 0.0, 1.0], (len(feet), 1))

    def admits(self, feet):
        feet = np.atleast_2d(feet)
        if self.kind == "airborne":
            return np.zeros(len(feet), dtype=bool)
        if self.kind == "walls":
            return np.abs(feet[:, 1]) >= self.half_width - CONTACT_TOL
        return feet[:, 2] <= CONTACT_TOL

    def penetration(self, points):
        """Deepest penetration of ``points`` into the environment (m, >= 0)."""
        points = np.atleast_2d(points)
        depth = max(0.0, -float(points[:, 2].min()))
        if self.kind == "walls":
            depth = max(depth, float(np.max(np.abs(points[:, 1]) - self.half_width)))
        return depth

    def constraint_set(self, model, feet):
        normals = None if self.kind != "walls" else self.normals(feet)
        return ConstraintSet.for_model(model, mu=self.mu, normals=normals)


def body_corners(model, x):
    """World positions of the 8 corners of the body box."""
    h = model.body_half_extents
    signs = np.array([[i, j, k] for i in (-1, 1) for j in (-1, 1) for k in (-1, 1)], dtype=float)
    return x[0:3] + quat.rotate(x[3:7], signs * h)


def world_feet(model, x):
    """Nominal contact points carried rigidly with the body (used while airborne)."""
    return x[0:3] + quat.rotate(x[3:7], model.contact_points)


def applied_control(env, model, u, feet, stance):
    """What the environment actually transmits: pyramid-projected, never pulling."""
    u = np.asarray(u, dtype=float)
    if model.variant == REACTION_WHEEL:
        return np.clip(u, -model.torque_limit, model.torque_limit)
    out = np.zeros_like(u)
    ok = np.asarray(stance, dtype=bool) & env.admits(feet)
    normals = env.normals(feet)
    for i in np.flatnonzero(ok):
        sl = slice(3 * i, 3 * i + 3)
        out[sl] = costs.project_force(u[sl], normals[i], env.mu, 0.0, model.force_max)
    return out


def _params(model, feet):
    feet = np.zeros((0, 3)) if model.variant == REACTION_WHEEL or feet is None else np.ascontiguousarray(feet, dtype=float)
    return (feet, float(model.mass), model.inertia, model.inertia_inv, model.gravity, model.variant == REACTION_WHEEL)


def physics_step(env, model, x, u, feet=None, stance=None, dt=1e-3):
    """One RK4 step of the plant with the environment's contact rules.

    Raises:
        PenetrationFault: a body corner is more than 5 cm inside the environment.
    """
    x = np.asarray(x, dtype=float)
    if stance is None:
        stance = np.ones(max(model.n_contacts, 1), dtype=bool)
    ua = applied_control(env, model, u, feet, stance) if model.variant == FOOT_FORCE else applied_control(env, model, u, None, None)
    xn = _kernels.rk4_step(x, ua, *_params(model, feet), float(dt))
    depth = env.penetration(body_corners(model, xn))
    if depth > PENETRATION_LIMIT:
        raise PenetrationFault(f"body penetrates the environment by {depth:.3f} m")
    return xn


def apply_impulse(model, x, impulse, point=(0.0, 0.0, 0.0)):
    """Instantaneous World-frame impulse applied at a Body-frame point."""
    x = np.array(x, dtype=float)
    J = np.asarray(impulse, dtype=float)
    x[7:10] += J / model.mass
    J_body = quat.rotate_inv(x[3:7], J)
    x[10:13] += model.inertia_inv @ np.cross(np.asarray(point, dtype=float), J_body)
    return x


# ---------------------------------------------------------------------------
# scenario configuration


@dataclass
class CommandSegment:
    """Piecewise command: constant offsets plus optional sinusoids from ``start``."""

    start: float = 0.0
    linear: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular: np.ndarray = field(default_factory=lambda: np.zeros(3))
    sine_linear: np.ndarray = field(default_factory=lambda: np.zeros(3))
    sine_angular: np.ndarray = field(default_factory=lambda: np.zeros(3))
    period: float = 1.0

    def at(self, t):
        s = math.sin(2.0 * math.pi * (t - self.start) / self.period)
        return VelocityCommand(self.linear + s * self.sine_linear, self.angular + s * self.sine_angular)


@dataclass
class Disturbance:
    time: float
    impulse: np.ndarray
    point: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass
class SuccessCriteria:
    max_attitude_error_deg: Optional[float] = None
    settle_time: float = 0.0
    fall_distance: float = 0.3
    fall_angle_deg: float = 60.0
    max_consecutive_degraded: int = 20


@dataclass
class Scenario:
    name: str
    robot: RobotModel
    environment: Environment = field(default_factory=Environment)
    controller: str = "quaternion"
    mpc: MpcConfig = field(default_factory=MpcConfig)
    gait: GaitSchedule = field(default_factory=GaitSchedule)
    mpc_rate: float = 100.0
    initial: np.ndarray = field(default_factory=lambda: dynamics.make_state())
    random_attitude: bool = False
    target_attitude: Optional[np.ndarray] = None
    commands: list = field(default_factory=list)
    disturbances: list = field(default_factory=list)
    duration: float = 1.0
    physics_dt: float = 1e-3
    seed: int = 0
    mode: str = "walk"
    success: SuccessCriteria = field(default_factory=SuccessCriteria)

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise ConfigError("controller.type", f"expected one of {CONTROLLERS}, got {self.controller!r}")
        if not self.duration > 0:
            raise ConfigError("duration", "must be positive")
        if not self.physics_dt > 0:
            raise ConfigError("physics_dt", "must be positive")
        if not self.mpc_rate > 0:
            raise ConfigError("controller.rate", "must be positive")
        if self.physics_dt > 1.0 / self.mpc_rate + 1e-12:
            raise ConfigError("physics_dt", "must not exceed the MPC period")
        if self.mode not in ("walk", "falling_cat"):
            raise ConfigError("mode", f"unknown mode {self.mode!r}")
        self.commands = sorted(self.commands, key=lambda c: c.start)

    @property
    def n_steps(self):
        return int(round(self.duration / self.physics_dt))

    @property
    def substeps(self):
        return max(1, int(round(1.0 / (self.mpc_rate * self.physics_dt))))

    def command(self, t):
        active = None
        for seg in self.commands:
            if seg.start <= t + 1e-12:
                active = seg
        return VelocityCommand() if active is None else active.at(t)


def _line_map(text):
    """Map dotted key paths to 1-based source lines."""
    lines = {}

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = f"{prefix}.{k.value}" if prefix else str(k.value)
                lines[key] = k.start_mark.line + 1
                walk(v, key)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                key = f"{prefix}[{i}]"
                lines[key] = v.start_mark.line + 1
                walk(v, key)

    try:
        walk(yaml.compose(text), "")
    except yaml.YAMLError:
        pass
    return lines


class _Reader:
    """Typed access to a config mapping that reports the offending field."""

    def __init__(self, data, prefix, lines):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise self._error(prefix or "<root>", "expected a mapping", lines)
        self.data = data
        self.prefix = prefix
        self.lines = lines
        self.used = set()

    @staticmethod
    def _error(path, msg, lines):
        line = lines.get(path)
        return ConfigError(path, f"{msg} (line {line})" if line else msg)

    def path(self, key):
        return f"{self.prefix}.{key}" if self.prefix else key

    def error(self, key, msg):
        return self._error(self.path(key), msg, self.lines)

    def has(self, key):
        return key in self.data

    def raw(self, key, default=None):
        self.used.add(key)
        return self.data.get(key, default)

    def number(self, key, default=None, positive=False):
        v = self.raw(key, default)
        if v is None:
            if default is None and key not in self.data:
                raise self.error(key, "missing required field")
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise self.error(key, f"expected a number, got {v!r}")
        if positive and not v > 0:
            raise self.error(key, "must be positive")
        return float(v)

    def vector(self, key, n, default=None):
        v = self.raw(key, default)
        if v is None:
            return None
        if np.isscalar(v) and not isinstance(v, str):
            v = [v] * n
        try:
            arr = np.asarray(v, dtype=float)
        except (TypeError, ValueError):
            raise self.error(key, f"expected {n} numbers, got {v!r}") from None
        if arr.shape != (n,) or not np.all(np.isfinite(arr)):
            raise self.error(key, f"expected {n} finite numbers, got {v!r}")
        return arr

    def string(self, key, default=None, choices=None):
        v = self.raw(key, default)
        if v is None and default is None:
            raise self.error(key, "missing required field")
        if not isinstance(v, str):
            raise self.error(key, f"expected a string, got {v!r}")
        if choices and v not in choices:
            raise self.error(key, f"expected one of {list(choices)}, got {v!r}")
        return v

    def child(self, key):
        return _Reader(self.raw(key, {}), self.path(key), self.lines)

    def finish(self):
        for key in self.data:
            if key not in self.used:
                raise self.error(key, "unknown field")


def _weights(r: _Reader):
    w = CostWeights()
    kw = dict(
        w_r=r.vector("position", 3, w.w_r),
        w_q=r.number("attitude", w.w_q),
        w_v=r.vector("velocity", 3, w.w_v),
        w_w=r.vector("angular_velocity", 3, w.w_w),
        r_u=r.number("control", float(w.r_u), positive=True),
        terminal=r.number("terminal", w.terminal),
    )
    r.finish()
    try:
        return CostWeights(**kw)
    except ValueError as exc:
        raise r.error("", str(exc)) from None


def _solver(r: _Reader, base: SolverSettings):
    kw = {}
    for key in ("max_outer", "max_inner"):
        if r.has(key):
            v = r.raw(key)
            if not isinstance(v, int) or v < 1:
                raise r.error(key, "must be a positive integer")
            kw[key] = v
    for key in ("cost_tol", "grad_tol", "constraint_tol"):
        if r.has(key):
            kw[key] = r.number(key, positive=True)
    r.finish()
    return replace(base, **kw)


def _robot(value, r: _Reader, base_dir):
    if isinstance(value, dict):
        return RobotModel.from_dict(value)
    if not isinstance(value, str):
        raise r.error("robot", "expected a robot name or file path")
    path = Path(value)
    if not path.is_absolute() and base_dir is not None:
        path = Path(base_dir) / path
    if path.suffix in (".yaml", ".yml") and path.exists():
        return RobotModel.from_file(path)
    return dynamics.builtin_robot(value)


def scenario_from_dict(data, lines=None, base_dir=None):
    """Build a :class:`Scenario` from parsed configuration data."""
    lines = lines or {}
    r = _Reader(data, "", lines)
    fmt = r.raw("format")
    if fmt != SCENARIO_FORMAT:
        raise r.error("format", f"expected {SCENARIO_FORMAT!r}, got {fmt!r}")
    name = r.string("name", "scenario")
    if "robot" not in r.data:
        raise r.error("robot", "missing required field")
    robot = _robot(r.raw("robot"), r, base_dir)

    er = r.child("environment")
    env = Environment(
        kind=er.string("kind", "flat", ("flat", "walls", "airborne")),
        half_width=er.number("half_width", 0.2, positive=True),
        mu=er.number("mu", 0.6, positive=True),
    )
    er.finish()

    cr = r.child("controller")
    ctype = cr.string("type", "quaternion", CONTROLLERS)
    horizon = cr.raw("horizon", 37)
    if not isinstance(horizon, int) or horizon < 2:
        raise cr.error("horizon", "must be an integer >= 2")
    knot_dt = cr.number("dt", 0.01, positive=True)
    rate = cr.number("rate", 100.0, positive=True)
    height = cr.number("height", robot.nominal_height) if cr.has("height") else None
    weights = _weights(cr.child("weights"))
    settings = _solver(cr.child("solver"), MpcConfig().settings)
    gr = cr.child("gait")
    gtype = gr.string("type", "stand", ("stand", "trot"))
    offsets = gr.raw("offsets", list(GaitSchedule().offsets))
    try:
        gait = GaitSchedule(
            gait=gtype,
            period=gr.number("period", 0.5, positive=True),
            duty=gr.number("duty", 0.5, positive=True),
            offsets=tuple(float(o) for o in offsets),
        )
    except (TypeError, ValueError) as exc:
        raise gr.error("offsets", str(exc)) from None
    gr.finish()
    cr.finish()
    mpc = MpcConfig(horizon=horizon, dt=knot_dt, weights=weights, settings=settings, height=height)

    ir = r.child("initial")
    position = ir.vector("position", 3, [0.0, 0.0, robot.nominal_height])
    att = ir.raw("attitude", [1.0, 0.0, 0.0, 0.0])
    random_attitude = att == "random"
    if random_attitude:
        q0 = quat.IDENTITY.copy()
    else:
        q0 = ir.vector("attitude", 4, [1.0, 0.0, 0.0, 0.0])
        if np.linalg.norm(q0) < 1e-9:
            raise ir.error("attitude", "quaternion must be nonzero")
        q0 = quat.normalize(q0)
    x0 = dynamics.make_state(
        position, q0, ir.vector("velocity", 3, [0.0, 0.0, 0.0]), ir.vector("angular_velocity", 3, [0.0, 0.0, 0.0])
    )
    ir.finish()

    target = None
    if r.has("target_attitude"):
        tv = r.raw("target_attitude")
        target = "landing" if tv == "landing" else quat.normalize(r.vector("target_attitude", 4))

    commands = []
    raw_cmds = r.raw("commands", []) or []
    if not isinstance(raw_cmds, list):
        raise r.error("commands", "expected a list")
    for i, item in enumerate(raw_cmds):
        c = _Reader(item, f"commands[{i}]", lines)
        sr = c.child("sine")
        seg = CommandSegment(
            start=c.number("start", 0.0),
            linear=c.vector("linear", 3, [0.0, 0.0, 0.0]),
            angular=c.vector("angular", 3, [0.0, 0.0, 0.0]),
            sine_linear=sr.vector("linear", 3, [0.0, 0.0, 0.0]),
            sine_angular=sr.vector("angular", 3, [0.0, 0.0, 0.0]),
            period=sr.number("period", 1.0, positive=True),
        )
        sr.finish()
        c.finish()
        commands.append(seg)

    disturbances = []
    raw_dist = r.raw("disturbances", []) or []
    if not isinstance(raw_dist, list):
        raise r.error("disturbances", "expected a list")
    for i, item in enumerate(raw_dist):
        d = _Reader(item, f"disturbances[{i}]", lines)
        disturbances.append(
            Disturbance(d.number("time"), d.vector("impulse", 3, [0.0, 3.0, 0.0]), d.vector("point", 3, [0.0, 0.0, 0.0]))
        )
        d.finish()

    sc = r.child("success")
    success = SuccessCriteria(
        max_attitude_error_deg=sc.number("max_attitude_error_deg", None) if sc.has("max_attitude_error_deg") else None,
        settle_time=sc.number("settle_time", 0.0),
        fall_distance=sc.number("fall_distance", 0.3, positive=True),
        fall_angle_deg=sc.number("fall_angle_deg", 60.0, positive=True),
        max_consecutive_degraded=int(sc.number("max_consecutive_degraded", 20, positive=True)),
    )
    sc.finish()

    seed = r.raw("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise r.error("seed", "must be a nonnegative integer")
    scenario = Scenario(
        name=name,
        robot=robot,
        environment=env,
        controller=ctype,
        mpc=mpc,
        gait=gait,
        mpc_rate=rate,
        initial=x0,
        random_attitude=random_attitude,
        target_attitude=target,
        commands=commands,
        disturbances=disturbances,
        duration=r.number("duration", positive=True),
        physics_dt=r.number("physics_dt", 1e-3, positive=True),
        seed=seed,
        mode=r.string("mode", "walk", ("walk", "falling_cat")),
        success=success,
    )
    r.finish()
    return scenario


def load_scenario(path):
    """Read a scenario file (path, or the name of a packaged scenario)."""
    p = Path(path)
    if not p.exists():
        packaged = SCENARIO_DIR / f"{path}.yaml"
        if packaged.exists():
            p = packaged
        else:
            raise ConfigError("<file>", f"cannot read scenario {str(path)!r}")
    text = p.read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" (line {mark.line + 1})" if mark is not None else ""
        raise ConfigError("<file>", f"YAML parse error{where}: {getattr(exc, 'problem', exc)}") from None
    return scenario_from_dict(data, _line_map(text), p.parent)


# ---------------------------------------------------------------------------
# run log


@dataclass
class RunLog:
    """Per-physics-step record; ``solve_ms`` is NaN on rows without a controller tick."""

    nu: int
    time: list = field(default_factory=list)
    state: list = field(default_factory=list)
    reference: list = field(default_factory=list)
    control: list = field(default_factory=list)
    solve_ms: list = field(default_factory=list)
    status: list = field(default_factory=list)
    outcome: str = "completed"
    summary: dict = field(default_factory=dict)

    def append(self, t, x, x_ref, u, solve_ms, status):
        self.time.append(float(t))
        self.state.append(np.array(x, dtype=float))
        self.reference.append(np.array(x_ref, dtype=float))
        self.control.append(np.array(u, dtype=float))
        self.solve_ms.append(float(solve_ms))
        self.status.append(status)

    def __len__(self):
        return len(self.time)

    @property
    def columns(self):
        names = ["time"]
        names += [f"x_{n}" for n in _STATE_NAMES]
        names += [f"ref_{n}" for n in _STATE_NAMES]
        names += [f"u{i}" for i in range(self.nu)]
        return names + ["solve_ms", "status"]

    def arrays(self):
        return (
            np.asarray(self.time),
            np.asarray(self.state),
            np.asarray(self.reference),
            np.asarray(self.control),
            np.asarray(self.solve_ms),
        )

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns)
            for i in range(len(self)):
                row = [repr(self.time[i])]
                row += [repr(float(v)) for v in self.state[i]]
                row += [repr(float(v)) for v in self.reference[i]]
                row += [repr(float(v)) for v in self.control[i]]
                row += ["" if math.isnan(self.solve_ms[i]) else f"{self.solve_ms[i]:.4f}", self.status[i]]
                w.writerow(row)


_STATE_NAMES = ["rx", "ry", "rz", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "wx", "wy", "wz"]


def attitude_errors(X, X_ref):
    """Body-frame rotation-vector error of ``q`` relative to ``q_ref`` (rad), per row."""
    dq = quat.quat_mul(quat.conj(X_ref[:, 3:7]), X[:, 3:7])
    return np.array([quat.rotation_vector(q) for q in dq])


def summarize(log: RunLog, scenario: Scenario):
    t, X, Xr, U, ms = log.arrays()
    err = attitude_errors(X, Xr)
    geo = np.degrees(np.linalg.norm(err, axis=1))
    settle = t >= scenario.success.settle_time
    ticks = ~np.isnan(ms)
    tick_ms = ms[ticks]
    pos_dev = np.linalg.norm(X[:, 0:3] - Xr[:, 0:3], axis=1)
    s = {
        "scenario": scenario.name,
        "controller": scenario.controller,
        "outcome": log.outcome,
        "duration": float(t[-1]),
        "rows": len(log),
        "ticks": int(ticks.sum()),
        "degraded_ticks": int(sum(st == "degraded" for st in log.status)),
        "rms_attitude_error_deg": [float(v) for v in np.degrees(np.sqrt(np.mean(err ** 2, axis=0)))],
        "max_attitude_error_deg": float(geo.max()),
        "steady_max_attitude_error_deg": float(geo[settle].max()) if settle.any() else float("nan"),
        "max_position_deviation_m": float(pos_dev.max()),
        "final_position_deviation_m": float(pos_dev[-1]),
        "median_solve_ms": float(np.median(tick_ms[1:])) if len(tick_ms) > 1 else float("nan"),
        "max_solve_ms": float(tick_ms[1:].max()) if len(tick_ms) > 1 else float("nan"),
    }
    ok = log.outcome == "completed"
    limit = scenario.success.max_attitude_error_deg
    if ok and limit is not None and s["steady_max_attitude_error_deg"] > limit:
        ok = False
        s["outcome"] = "tracking_error"
    s["success"] = bool(ok)
    return s


# ---------------------------------------------------------------------------
# scenario runner


def make_controller(scenario: Scenario, cset):
    cls = QuaternionMpc if scenario.controller == "quaternion" else EulerMpc
    return cls(scenario.robot, replace(scenario.mpc, constraints=cset), scenario.gait)


def initial_feet(scenario: Scenario, x0):
    model, env = scenario.robot, scenario.environment
    if model.variant == REACTION_WHEEL:
        return None
    if env.kind == "walls":
        feet = world_feet(model, x0)
        feet[:, 1] = np.where(model.contact_points[:, 1] >= 0, 1.0, -1.0) * env.half_width
        return feet
    feet = x0[0:3] + quat.rotate(x0[3:7], model.contact_points * [1.0, 1.0, 0.0])
    feet[:, 2] = 0.0
    return feet


def _touchdown(model, x):
    """Lowest-point test at first ground contact; returns ``(touched, feet_first)``."""
    feet = world_feet(model, x)
    corners = body_corners(model, x)
    lowest = min(feet[:, 2].min(), corners[:, 2].min())
    if lowest > 0.0:
        return False, False
    return True, bool(feet[:, 2].max() < corners[:, 2].min())


def time_to_ground(model, x):
    """Ballistic time until the upright feet would reach the ground plane."""
    depth = -float(np.min(model.contact_points[:, 2]))
    g = float(model.gravity[2])
    h = float(x[2]) - depth
    vz = float(x[9])
    if h <= 0.0:
        return 0.0
    return (vz + math.sqrt(vz * vz + 2.0 * g * h)) / g


def run_scenario(scenario: Scenario, q0=None, controller=None):
    """Run a scenario to completion (or failure) and return its :class:`RunLog`.

    Args:
        q0: overrides the initial attitude (used for seeded random trials).
        controller: optional pre-built controller instance.
    """
    model, env = scenario.robot, scenario.environment
    x = scenario.initial.copy()
    if q0 is None and scenario.random_attitude:
        q0 = sample_attitude(scenario.seed)
    if q0 is not None:
        x[3:7] = quat.normalize(q0)
    target = scenario.target_attitude
    if isinstance(target, str):
        target = costs.landing_target(x[3:7])
    feet = initial_feet(scenario, x)
    cset = env.constraint_set(model, feet) if feet is not None else ConstraintSet.for_model(model)
    ctrl = controller or make_controller(scenario, cset)
    ctrl.reset(x, q_des=target)
    n_c = model.n_contacts
    log_ = RunLog(model.nu)
    dt = scenario.physics_dt
    sub = scenario.substeps
    pending = sorted(scenario.disturbances, key=lambda d: d.time)
    u = np.zeros(model.nu)
    x_ref = ctrl.anchor.copy()
    stance_prev = scenario.gait.flags(0.0, n_c) if feet is not None else None
    degraded_run = 0
    fall_dist = scenario.success.fall_distance
    fall_angle = math.radians(scenario.success.fall_angle_deg)
    walking = feet is not None and scenario.gait.gait != "stand" and env.kind == "flat"
    planned = None if feet is None else feet.copy()
    for i in range(scenario.n_steps + 1):
        t = i * dt
        stance = scenario.gait.flags(t, n_c) if feet is not None else None
        if walking:
            landing = stance & ~stance_prev
            feet[landing] = planned[landing]
            stance_prev = stance
        solve_ms = float("nan")
        status = "hold"
        if i % sub == 0:
            cmd = scenario.command(t)
            if walking:
                planned = foothold_heuristic(x, cmd, scenario.gait, model, ctrl.frame.yaw)
                plan_feet = np.where(stance[:, None], feet, planned)
            else:
                plan_feet = feet
            deadline = t + time_to_ground(model, x) if scenario.mode == "falling_cat" else None
            tick = ctrl.step(x, cmd, t, plan_feet, deadline=deadline)
            u = tick.u0
            x_ref = tick.reference
            solve_ms = 1e3 * tick.solve_time
            status = "degraded" if tick.degraded else tick.report.status
            degraded_run = degraded_run + 1 if tick.degraded else 0
        ua = applied_control(env, model, u, feet, stance) if feet is not None else applied_control(env, model, u, None, None)
        # failure checks on the logged row
        outcome = None
        if not np.all(np.isfinite(x)):
            outcome = "diverged"
        elif scenario.mode == "falling_cat":
            touched, feet_first = _touchdown(model, x)
            if touched:
                outcome = "touchdown"
        else:
            if np.linalg.norm(x[0:3] - x_ref[0:3]) > fall_dist or quat.geodesic_angle(x[3:7], x_ref[3:7]) > fall_angle:
                outcome = "fall"
            elif degraded_run > scenario.success.max_consecutive_degraded:
                outcome = "degraded"
        log_.append(t, x, x_ref, ua, solve_ms, outcome or status)
        if outcome is not None:
            log_.outcome = outcome
            break
        if i == scenario.n_steps:
            break
        while pending and pending[0].time < t + dt - 1e-12:
            d = pending.pop(0)
            if d.time >= t - 1e-12:
                x = apply_impulse(model, x, d.impulse, d.point)
        try:
            x = physics_step(env, model, x, u, feet, stance, dt)
        except PenetrationFault as exc:
            log.debug("%s: %s", scenario.name, exc)
            log_.append(t + dt, x, x_ref, ua, float("nan"), "penetration")
            log_.outcome = "penetration"
            break
    log_.summary = summarize(log_, scenario)
    if scenario.mode == "falling_cat":
        log_.summary.update(_landing_summary(model, log_, target))
    return log_


def _landing_summary(model, log_: RunLog, target):
    x = log_.state[-1]
    touched, feet_first = _touchdown(model, x)
    z_body = quat.rotate(x[3:7], [0.0, 0.0, 1.0])
    tilt = math.degrees(math.acos(float(np.clip(z_body[2], -1.0, 1.0))))
    ok = bool(touched and feet_first and tilt < 15.0)
    return {
        "touchdown": bool(touched),
        "touchdown_time": log_.time[-1],
        "feet_first": bool(feet_first),
        "tilt_deg": tilt,
        "target_error_deg": math.degrees(quat.geodesic_angle(x[3:7], target)) if target is not None else float("nan"),
        "success": ok,
        "outcome": "landed" if ok else ("no_touchdown" if not touched else "bad_landing"),
    }


# ---------------------------------------------------------------------------
# experiments


def trial_seed(base_seed, index):
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1)[0])


def sample_attitude(seed):
    """Uniform random rotation from a normalized 4-D Gaussian."""
    return quat.random_unit(np.random.default_rng(seed))


def falling_cat_trial(seed, controller="quaternion", scenario=None):
    """One airborne reorientation trial; returns a flat record."""
    s = scenario if scenario is not None else load_scenario("falling_cat")
    if s.controller != controller:
        s = replace(s, controller=controller)
    q0 = sample_attitude(seed)
    log_ = run_scenario(s, q0=q0)
    summ = log_.summary
    return {
        "seed": int(seed),
        "controller": controller,
        "initial_attitude": [float(v) for v in q0],
        "final_attitude": [float(v) for v in log_.state[-1][3:7]],
        "success": bool(summ["success"]),
        "outcome": summ["outcome"],
        "tilt_deg": float(summ["tilt_deg"]),
        "target_error_deg": float(summ["target_error_deg"]),
        "touchdown_time": float(summ["touchdown_time"]),
        "degraded_ticks": int(summ["degraded_ticks"]),
    }


@dataclass
class MonteCarloReport:
    controller: str
    base_seed: int
    records: dict

    @property
    def trials(self):
        return len(self.records)

    @property
    def successes(self):
        return sum(r["success"] for r in self.records.values())

    @property
    def success_rate(self):
        return self.successes / self.trials

    def summary(self):
        tilts = np.array([r["tilt_deg"] for r in self.records.values()])
        return {
            "controller": self.controller,
            "base_seed": self.base_seed,
            "trials": self.trials,
            "successes": self.successes,
            "success_rate": self.success_rate,
            "median_tilt_deg": float(np.median(tilts)),
            "max_tilt_deg": float(tilts.max()),
        }

    def table(self):
        rows = [f"{'trial':>5}  {'seed':>10}  {'outcome':<12} {'tilt_deg':>8}"]
        for i in sorted(self.records):
            r = self.records[i]
            rows.append(f"{i:>5}  {r['seed']:>10}  {r['outcome']:<12} {r['tilt_deg']:>8.2f}")
        rows.append(f"success rate: {self.successes}/{self.trials} = {self.success_rate:.2f}")
        return "\n".join(rows)


def _trial_job(args):
    index, seed, controller, scenario = args
    return index, falling_cat_trial(seed, controller, scenario)


def monte_carlo(n_trials, controller="quaternion", base_seed=0, scenario=None, workers=1):
    """Seeded falling-cat batch; records are keyed by trial index so order never matters."""
    if n_trials < 1:
        raise ValueError("need at least one trial")
    s = scenario if scenario is not None else load_scenario("falling_cat")
    jobs = [(i, trial_seed(base_seed, i), controller, s) for i in range(n_trials)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = dict(pool.map(_trial_job, jobs))
    else:
        results = dict(map(_trial_job, jobs))
    return MonteCarloReport(controller, base_seed, {i: results[i] for i in sorted(results)})


def continuous_pitch(q):
    """Pitch that keeps increasing through 90 deg: ``atan2(-R20, R22)``."""
    R = quat.to_rotmat(q)
    return math.atan2(-R[2, 0], R[2, 2])


def humanoid_attitude_sweep(controller="quaternion", axis=1, peak_deg=120.0, period=8.0, scenario=None):
    """Large-angle torso sweep ``0 -> peak -> 0`` about one body axis.

    Returns the run log; the summary gains ``peak_reference_deg`` and
    ``failure_reference_deg`` (reference angle when the run first degraded or
    exceeded 15 deg of error, NaN if it never did).
    """
    s = scenario if scenario is not None else load_scenario("humanoid_sweep")
    amp = np.zeros(3)
    amp[axis] = math.radians(peak_deg) * math.pi / period
    seg = CommandSegment(start=0.0, sine_angular=amp, period=period)
    s = replace(s, controller=controller, commands=[seg], duration=min(s.duration, period))
    log_ = run_scenario(s)
    _, X, Xr, _, _ = log_.arrays()
    ref_angle = np.degrees(np.linalg.norm(np.array([quat.rotation_vector(q) for q in Xr[:, 3:7]]), axis=1))
    err = np.degrees(np.linalg.norm(attitude_errors(X, Xr), axis=1))
    bad = np.flatnonzero((err > 15.0) | np.array([st in ("degraded", "fall", "penetration", "diverged") for st in log_.status]))
    log_.summary["peak_reference_deg"] = float(ref_angle.max())
    log_.summary["peak_error_deg"] = float(err.max())
    log_.summary["failure_reference_deg"] = float(ref_angle[bad[0]]) if len(bad) else float("nan")
    log_.summary["failure_time"] = float(log_.time[bad[0]]) if len(bad) else float("nan")
    return log_

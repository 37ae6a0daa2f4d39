"""Receding-horizon controller: gait schedule, references, warm starts, per-tick solve."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import costs, dynamics, quat
from .costs import ConstraintSet, CostWeights
from .dynamics import FOOT_FORCE
from .ilqr import ALiLQR, ALState, ConvergenceReport, Solution, SolverSettings
from .problem import SrbTrackingProblem

log = logging.getLogger(__name__)

TROT_OFFSETS = (0.0, 0.5, 0.5, 0.0)  # FL, FR, RL, RR: diagonal pairs share a phase


@dataclass(frozen=True)
class GaitSchedule:
    """Periodic stance/swing assignment; foot ``i`` is in stance while its phase < duty."""

    gait: str = "stand"
    period: float = 0.5
    duty: float = 0.5
    offsets: tuple = TROT_OFFSETS

    def __post_init__(self):
        if self.gait not in ("stand", "trot"):
            raise ValueError(f"unknown gait {self.gait!r}")
        if not 0.0 < self.duty <= 1.0:
            raise ValueError("duty factor must lie in (0, 1]")
        if any(not 0.0 <= o < 1.0 for o in self.offsets):
            raise ValueError("phase offsets must lie in [0, 1)")
        if self.period <= 0:
            raise ValueError("period must be positive")

    @property
    def stance_time(self):
        return self.duty * self.period

    def query(self, t, foot):
        if self.gait == "stand":
            return True
        phase = (t / self.period + self.offsets[foot]) % 1.0
        return phase < self.duty

    def flags(self, t, n_c):
        return np.array([self.query(t, i) for i in range(n_c)], dtype=bool)


def gait_contacts(schedule, t0, K, dt, n_c=4):
    """``(K, n_c)`` stance flags sampled at knot mid-times ``t0 + (k + 1/2) dt``."""
    return np.array([schedule.flags(t0 + (k + 0.5) * dt, n_c) for k in range(K)], dtype=bool)


@dataclass
class VelocityCommand:
    """Linear velocity in the Relative (yaw-only) frame, angular velocity in the Body frame."""

    linear: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.linear = np.asarray(self.linear, dtype=float)
        self.angular = np.asarray(self.angular, dtype=float)
        if not (np.all(np.isfinite(self.linear)) and np.all(np.isfinite(self.angular))):
            raise ValueError("velocity command must be finite")

    def clamped(self, max_linear=np.inf, max_angular=np.inf):
        return VelocityCommand(
            np.clip(self.linear, -max_linear, max_linear),
            np.clip(self.angular, -max_angular, max_angular),
        )


def yaw_rotation(yaw):
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


class RelativeFrame:
    """Yaw-only frame extracted from the body attitude.

    The heading is the horizontal projection of the body x axis.  When that
    projection gets short (pitch near +-90 deg) the last well-conditioned yaw
    is held until the projection recovers past a wider threshold.
    """

    def __init__(self, freeze_below=0.2, release_above=0.3):
        self.freeze_below = freeze_below
        self.release_above = release_above
        self.yaw = 0.0
        self.frozen = False

    def update(self, q):
        R = quat.to_rotmat(q)
        h = np.hypot(R[0, 0], R[1, 0])
        if self.frozen and h > self.release_above:
            self.frozen = False
        elif not self.frozen and h < self.freeze_below:
            self.frozen = True
        if not self.frozen:
            self.yaw = float(np.arctan2(R[1, 0], R[0, 0]))
        return self.yaw


def build_reference(x_now, cmd, K, dt, height=None, yaw=0.0):
    """Forward-integrate the command from ``x_now`` over ``K`` knots.

    Args:
        x_now: anchor state (13,).
        cmd: :class:`VelocityCommand`.
        height: if given, every knot's z is set to it.
        yaw: Relative-frame yaw used to rotate the linear command.

    Returns:
        ``(K, 13)`` reference states.
    """
    if K < 2:
        raise ValueError("horizon needs at least two knots")
    x_now = np.asarray(x_now, dtype=float)
    v_world = yaw_rotation(yaw) @ cmd.linear
    step = quat.rotation_increment(cmd.angular, dt)
    X = np.empty((K, 13))
    r = x_now[0:3].copy()
    if height is not None:
        r[2] = height
    q = quat.normalize(x_now[3:7])
    for k in range(K):
        X[k, 0:3] = r
        X[k, 3:7] = q
        X[k, 7:10] = v_world
        X[k, 10:13] = cmd.angular
        r = r + dt * v_world
        if height is not None:
            r[2] = height
        q = quat.compose(q, step)
    return X


def foothold_heuristic(x_now, cmd, schedule, model, yaw=0.0, ground_z=0.0):
    """Raibert-style landing points: hip projection plus half a stance of commanded travel.

    Offsets are clamped to ``model.reach`` around the hip projection.
    """
    x_now = np.asarray(x_now, dtype=float)
    Rz = yaw_rotation(yaw)
    hips = x_now[0:3] + (model.contact_points * [1.0, 1.0, 0.0]) @ Rz.T
    hips[:, 2] = ground_z
    offset = 0.5 * schedule.stance_time * (Rz @ cmd.linear)
    offset[2] = 0.0
    n = np.linalg.norm(offset)
    if n > model.reach:
        offset *= model.reach / n
    return hips + offset


@dataclass
class MpcConfig:
    horizon: int = 37
    dt: float = 0.01
    weights: CostWeights = field(default_factory=CostWeights)
    constraints: Optional[ConstraintSet] = None
    settings: SolverSettings = field(
        default_factory=lambda: SolverSettings(max_outer=4, max_inner=8, cost_tol=1e-3)
    )
    height: Optional[float] = None
    max_linear: float = 1.0
    max_angular: float = 3.0
    min_horizon: int = 5


@dataclass
class MpcTick:
    t: float
    u0: np.ndarray
    solve_time: float
    report: Optional[ConvergenceReport]
    degraded: bool = False
    reference: Optional[np.ndarray] = None


def weight_distribution(model, flags):
    """Initial guess: body weight shared equally among stance feet, per knot."""
    flags = np.asarray(flags, dtype=bool)
    U = np.zeros(flags.shape[:-1] + (model.nu,))
    if model.variant != FOOT_FORCE:
        return U
    n_st = np.maximum(flags.sum(-1), 1)
    fz = model.weight / n_st
    for i in range(model.n_contacts):
        U[..., 3 * i + 2] = np.where(flags[..., i], fz, 0.0)
    return U


def clamp_control(model, u, flags, cset):
    """Project an applied control into the admissible set; swing feet get zero force."""
    u = np.array(u, dtype=float)
    if model.variant != FOOT_FORCE:
        return np.clip(u, -cset.torque_limit, cset.torque_limit)
    frames = cset.surface_frames(model.n_contacts)
    for i in range(model.n_contacts):
        sl = slice(3 * i, 3 * i + 3)
        if not flags[i]:
            u[sl] = 0.0
            continue
        u[sl] = costs.project_force(u[sl], frames[i, 2], cset.mu, cset.f_min, cset.f_max)
    return u


def _shift_to(A, shift, n):
    """Drop ``shift`` leading rows, then trim or pad (repeating the last row) to ``n`` rows."""
    A = A[min(shift, len(A) - 1):]
    if len(A) < n:
        A = np.concatenate([A, np.repeat(A[-1:], n - len(A), axis=0)], axis=0)
    return A[:n].copy()


class QuaternionMpc:
    """Quaternion SRB MPC.

    The controller keeps a commanded pose (position and attitude) that it
    integrates from the velocity commands between ticks; each horizon
    reference starts from that pose.
    """

    def __init__(self, model, config: Optional[MpcConfig] = None, gait: Optional[GaitSchedule] = None):
        self.model = model
        self.config = config or MpcConfig()
        if self.config.constraints is None:
            self.config = replace(self.config, constraints=ConstraintSet.for_model(model))
        self.gait = gait or GaitSchedule()
        self.solver = ALiLQR(self.config.settings)
        self.frame = RelativeFrame()
        self.previous: Optional[Solution] = None
        self.last_u: Optional[np.ndarray] = None
        self.t_prev: Optional[float] = None
        self.anchor: Optional[np.ndarray] = None

    @property
    def height(self):
        return self.config.height if self.config.height is not None else self.model.nominal_height

    def reset(self, x_now, r_des=None, q_des=None):
        x_now = np.asarray(x_now, dtype=float)
        self.anchor = x_now.copy()
        self.anchor[7:13] = 0.0
        if r_des is not None:
            self.anchor[0:3] = r_des
        if q_des is not None:
            self.anchor[3:7] = quat.normalize(q_des)
        self.previous = None
        self.last_u = None
        self.t_prev = None
        self.frame = RelativeFrame()
        self.frame.update(self.anchor[3:7])

    def _advance_anchor(self, cmd, t_now):
        if self.anchor is None:
            raise RuntimeError("controller not reset")
        if self.t_prev is None:
            return 0
        h = t_now - self.t_prev
        yaw = self.frame.update(self.anchor[3:7])
        self.anchor[0:3] += h * (yaw_rotation(yaw) @ cmd.linear)
        self.anchor[3:7] = quat.compose(self.anchor[3:7], quat.rotation_increment(cmd.angular, h))
        return max(0, int(round(h / self.config.dt)))

    def _knots(self, t_now, deadline):
        """Horizon length, shrunk so the last knot lands on ``deadline`` when given."""
        K = self.config.horizon
        if deadline is None:
            return K
        k_left = int(np.ceil((deadline - t_now) / self.config.dt - 1e-9)) + 1
        return int(np.clip(k_left, min(self.config.min_horizon, K), K))

    def _flags(self, t_now, K=None):
        K = self.config.horizon if K is None else K
        return gait_contacts(self.gait, t_now, K - 1, self.config.dt, max(self.model.n_contacts, 1))

    def _initial_guess(self, flags, shift):
        if self.previous is None:
            return weight_distribution(self.model, flags), None
        U = self.previous.U
        shift = min(shift, len(U) - 1)
        N = len(flags)
        U = _shift_to(U, shift, N)
        al = self.previous.al
        if al is not None:
            al = ALState(_shift_to(al.lam, shift, N), self.config.settings.penalty_init)
        if self.model.variant == FOOT_FORCE:
            # feet that change phase inside the horizon start from the nominal share
            fresh = weight_distribution(self.model, flags)
            for i in range(self.model.n_contacts):
                sl = slice(3 * i, 3 * i + 3)
                U[:, sl] = np.where(flags[:, i:i + 1], U[:, sl], 0.0)
                newly = flags[:, i] & (U[:, 3 * i + 2] <= 0.0)
                U[newly, sl] = fresh[newly, sl]
        return U, al

    def make_problem(self, X_ref, U_ref, flags, feet):
        c = self.config
        return SrbTrackingProblem(self.model, X_ref, U_ref, flags, feet, c.weights, c.constraints, c.dt)

    def solve_horizon(self, x_now, X_ref, U_ref, flags, feet, U_init, al):
        problem = self.make_problem(X_ref, U_ref, flags, feet)
        return self.solver.solve(problem, x_now, U_init, al=al)

    def reference(self, cmd, K=None):
        yaw = self.frame.yaw
        K = self.config.horizon if K is None else K
        return build_reference(self.anchor, cmd, K, self.config.dt, self._ref_height(), yaw)

    def _ref_height(self):
        return self.height if self.model.variant == FOOT_FORCE else None

    def step(self, x_now, cmd: VelocityCommand, t_now, feet=None, previous: Optional[Solution] = None, deadline=None):
        """One controller tick; never raises on solver failure.

        On failure the previous tick's control is returned with
        ``degraded=True``.  ``deadline`` (absolute time) shrinks the horizon
        so that it ends there, e.g. at a predicted touchdown.
        """
        if previous is not None:
            self.previous = previous
        cmd = cmd.clamped(self.config.max_linear, self.config.max_angular)
        x_now = np.asarray(x_now, dtype=float)
        shift = self._advance_anchor(cmd, t_now)
        self.t_prev = t_now
        K = self._knots(t_now, deadline)
        flags = self._flags(t_now, K)
        X_ref = self.reference(cmd, K)
        U_ref = weight_distribution(self.model, flags)
        U_init, al = self._initial_guess(flags, shift)
        t0 = time.perf_counter()
        try:
            # rejected trial steps may overflow; failures are handled below
            with np.errstate(over="ignore", invalid="ignore"):
                sol = self.solve_horizon(x_now, X_ref, U_ref, flags, feet, U_init, al)
            if not np.all(np.isfinite(sol.U)):
                raise FloatingPointError("non-finite control")
        except Exception as exc:  # degraded-mode contract: always emit a control
            log.debug("solver failure at t=%.3f: %s", t_now, exc)
            elapsed = time.perf_counter() - t0
            self.previous = None
            u = self.last_u if self.last_u is not None else U_init[0]
            u = clamp_control(self.model, u, flags[0], self.config.constraints)
            return MpcTick(t_now, u, elapsed, None, degraded=True, reference=X_ref[0])
        elapsed = time.perf_counter() - t0
        self.previous = sol
        u = clamp_control(self.model, sol.U[0], flags[0], self.config.constraints)
        self.last_u = u
        return MpcTick(t_now, u, elapsed, sol.report, degraded=False, reference=X_ref[0])

"""Quaternion SRB reference-tracking problem for :class:`quatmpc.ilqr.ALiLQR`."""

from __future__ import annotations

import numpy as np

from . import _kernels, costs, dynamics
from .dynamics import REACTION_WHEEL
from .exceptions import NearSingularChart, RolloutDiverged


class SrbTrackingProblem:
    """Track ``X_ref`` with the SRB model under contact constraints.

    Args:
        model: :class:`~quatmpc.dynamics.RobotModel`.
        X_ref: reference states ``(K, 13)``.
        U_ref: reference controls ``(K-1, nu)``.
        flags: stance flags per control knot ``(K-1, n_c)`` (ignored for
            the reaction-wheel variant).
        feet: World-frame contact positions, held over the horizon.
        weights: :class:`~quatmpc.costs.CostWeights`.
        cset: :class:`~quatmpc.costs.ConstraintSet`, or ``None`` for an
            unconstrained problem.
    """

    ndx = dynamics.NDX

    def __init__(self, model, X_ref, U_ref, flags, feet, weights, cset, dt=0.01):
        self.model = model
        self.X_ref = np.asarray(X_ref, dtype=float)
        self.U_ref = np.asarray(U_ref, dtype=float)
        self.K = len(self.X_ref)
        self.nu = model.nu
        self.flags = None if flags is None else np.asarray(flags, dtype=bool)
        self.feet = None if feet is None else np.asarray(feet, dtype=float)
        self.weights = weights
        self.cset = cset
        self.dt = dt
        m = model
        feet = self.feet if self.feet is not None and m.variant != REACTION_WHEEL else np.zeros((0, 3))
        self._params = (
            np.ascontiguousarray(feet, dtype=float), float(m.mass), m.inertia, m.inertia_inv,
            m.gravity, m.variant == REACTION_WHEEL, float(dt),
        )

    def step(self, k, x, u):
        return _kernels.midpoint_step(np.asarray(x, dtype=float), np.asarray(u, dtype=float), *self._params)

    def rollout(self, x0, U):
        return _kernels.srb_rollout(np.asarray(x0, dtype=float), np.ascontiguousarray(U, dtype=float), *self._params)

    def closed_loop(self, X, U, K, d, alpha, bound):
        Xn, Un, status = _kernels.srb_closed_loop(X, U, K, d, float(alpha), *self._params, float(bound))
        if status == 1:
            raise RolloutDiverged(f"state left the bound {bound:g}")
        if status == 2:
            raise NearSingularChart("closed-loop rollout drifted half a turn from the nominal")
        return Xn, Un

    def state_error(self, x, x_nom):
        return dynamics.state_error(x, x_nom)

    def linearize(self, X, U):
        return dynamics.linearize_trajectory(self.model, X, U, self.feet, self.dt)

    def cost(self, X, U):
        w = self.weights
        stage = costs.stage_cost(X[:-1], U, self.X_ref[:-1], self.U_ref, w)
        term = w.terminal * costs.stage_cost(X[-1], None, self.X_ref[-1], None, w)
        return float(np.sum(stage) + term)

    def cost_expansion(self, X, U):
        w = self.weights
        st = costs.stage_expansion(X[:-1], U, self.X_ref[:-1], self.U_ref, w)
        te = costs.stage_expansion(X[-1], None, self.X_ref[-1], None, w, scale=w.terminal)
        lx = np.concatenate([st.lx, te.lx[None]], axis=0)
        lxx = np.concatenate([st.lxx, te.lxx[None]], axis=0)
        return lx, st.lu, lxx, st.luu, st.lux

    def constraints(self, X, U):
        if self.cset is None:
            return None
        return costs.control_constraints(self.model, U, self.flags, self.cset)

"""Follower-reaction predictors behind one planning contract.

Every predictor exposes an internal state (the lifted vector for the
learned linear model, the raw follower state otherwise), a one-step
advance driven by the leader's state and control, the advance's Jacobians,
and a decode back to the follower state.  The receding-horizon planner is
generic over this contract, so the learned models, the plain linear fit,
the one-step network, and the exact feedback oracle all run through the
same loop.
"""
from __future__ import annotations

import numpy as np

from koopguide.dynamics import JointState, V_MAX, V_MIN, W_MAX, W_MIN, step, step_jacobians
from koopguide.environment import Environment
from koopguide.follower import FollowerWeights, GridSpec, best_response, stationarity
from koopguide.learning.baselines import DmdModel, OneStepNnModel
from koopguide.learning.koopman import KoopmanModel, embed, predict_rollout


class BasePredictor:
    """Shared rollout built on lift/advance/decode."""

    dim: int
    name: str

    def lift(self, xF: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def decode_matrix(self) -> np.ndarray:
        raise NotImplementedError

    def advance(self, s, xL, uL) -> np.ndarray:
        raise NotImplementedError

    def advance_jac(self, s, xL, uL):
        raise NotImplementedError

    def rollout(self, xF0, leader_states, leader_controls) -> np.ndarray:
        """Predict follower states for steps 1..K from recorded leader data."""
        XL = np.asarray(leader_states, dtype=float).reshape(-1, 3)
        UL = np.asarray(leader_controls, dtype=float).reshape(-1, 2)
        C = self.decode_matrix()
        s = self.lift(np.asarray(xF0, dtype=float))
        out = np.empty((XL.shape[0], 3))
        for k in range(XL.shape[0]):
            s = self.advance(s, XL[k], UL[k])
            out[k] = C @ s
        return out


class KoopmanPredictor(BasePredictor):
    """Lifted linear model: embed once, then advance linearly."""

    name = "koopman"

    def __init__(self, model: KoopmanModel):
        self.model = model
        self.dim = model.lifted_dim
        self._C = model.C

    def lift(self, xF):
        return embed(self.model, xF)

    def decode_matrix(self):
        return self._C

    def advance(self, s, xL, uL):
        return self.model.A @ s + self.model.B1 @ xL + self.model.B2 @ uL

    def advance_jac(self, s, xL, uL):
        return self.model.A, self.model.B1, self.model.B2

    def rollout(self, xF0, leader_states, leader_controls):
        return predict_rollout(self.model, xF0, leader_states, leader_controls)


class DmdPredictor(BasePredictor):
    """Plain linear one-step model on the raw state."""

    name = "dmd"
    dim = 3

    def __init__(self, model: DmdModel):
        self.model = model

    def lift(self, xF):
        return np.asarray(xF, dtype=float).copy()

    def decode_matrix(self):
        return np.eye(3)

    def advance(self, s, xL, uL):
        return self.model.A @ s + self.model.B @ np.concatenate([xL, uL])

    def advance_jac(self, s, xL, uL):
        return self.model.A, self.model.B[:, :3], self.model.B[:, 3:]


class NnPredictor(BasePredictor):
    """One-step network applied recursively; Jacobians by backprop."""

    name = "nn"
    dim = 3

    def __init__(self, model: OneStepNnModel):
        self.model = model

    def lift(self, xF):
        return np.asarray(xF, dtype=float).copy()

    def decode_matrix(self):
        return np.eye(3)

    def advance(self, s, xL, uL):
        return self.model.predict(s, xL, uL)

    def advance_jac(self, s, xL, uL):
        return self.model.jacobians(s, xL, uL)


class FrozenPredictor(BasePredictor):
    """Predicts a motionless follower; degenerate baseline for tests."""

    name = "frozen"
    dim = 3

    def lift(self, xF):
        return np.asarray(xF, dtype=float).copy()

    def decode_matrix(self):
        return np.eye(3)

    def advance(self, s, xL, uL):
        return np.asarray(s, dtype=float).copy()

    def advance_jac(self, s, xL, uL):
        return np.eye(3), np.zeros((3, 3)), np.zeros((3, 2))


class FeedbackOraclePredictor(BasePredictor):
    """Ground-truth closed-loop reaction with smooth local refinement.

    Values come from the exact feedback dynamics (grid best response, then
    a few projected Newton steps on the barrier-penalized objective so the
    map is continuous between grid cells); Jacobians come from implicit
    differentiation of the stationarity condition with bound-saturated
    controls held fixed.
    """

    name = "oracle"
    dim = 3

    def __init__(self, fw: FollowerWeights, env: Environment, grid: GridSpec, dt: float,
                 refine_steps: int = 6):
        self.fw = fw
        self.env = env
        self.grid = grid
        self.dt = dt
        self.refine_steps = refine_steps

    def lift(self, xF):
        return np.asarray(xF, dtype=float).copy()

    def decode_matrix(self):
        return np.eye(3)

    def _response(self, xF, xL, uL) -> np.ndarray:
        u = best_response(JointState(np.asarray(xL, float), np.asarray(xF, float)), uL, self.fw, self.env, self.grid, self.dt)
        lo = np.array([V_MIN, W_MIN])
        hi = np.array([V_MAX, W_MAX])
        for _ in range(self.refine_steps):
            G, H, *_ = stationarity(xF, u, xL, uL, self.fw, self.env, self.dt, soft=True)
            try:
                du = np.linalg.solve(H, -G)
            except np.linalg.LinAlgError:
                du = -0.05 * G
            if not np.all(np.isfinite(du)):
                break
            u = np.clip(u + np.clip(du, -0.2, 0.2), lo, hi)
        return u

    def advance(self, s, xL, uL):
        return step(np.asarray(s, float), self._response(s, xL, uL), self.dt)

    def advance_jac(self, s, xL, uL):
        xF = np.asarray(s, dtype=float)
        u = self._response(xF, xL, uL)
        G, dG_du, dG_dxF, dG_dxL, dG_duL = stationarity(xF, u, xL, uL, self.fw, self.env, self.dt, soft=True)
        lo = np.array([V_MIN, W_MIN])
        hi = np.array([V_MAX, W_MAX])
        tol = 1e-9
        free = ~(((u <= lo + tol) & (G > 0)) | ((u >= hi - tol) & (G < 0)))
        dU_dxF = np.zeros((2, 3))
        dU_dxL = np.zeros((2, 3))
        dU_duL = np.zeros((2, 2))
        if free.any():
            f = np.flatnonzero(free)
            Hff = dG_du[np.ix_(f, f)]
            try:
                Hinv = np.linalg.inv(Hff)
            except np.linalg.LinAlgError:
                Hinv = np.linalg.pinv(Hff)
            dU_dxF[f] = -Hinv @ dG_dxF[f]
            dU_dxL[f] = -Hinv @ dG_dxL[f]
            dU_duL[f] = -Hinv @ dG_duL[f]
        A, B = step_jacobians(xF, u, self.dt)
        return A + B @ dU_dxF, B @ dU_dxL, B @ dU_duL

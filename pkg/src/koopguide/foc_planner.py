"""Model-based leader baseline.

Knows the follower's objective and reduces the bilevel guidance game to a
single-level horizon problem: the follower's inner minimization is replaced
by the stationarity (first-order) condition of his barrier-penalized
one-step cost, giving equality constraints alongside the leader's own
obstacle clearances.  Decision variables are both control sequences,
transcribed by single shooting (states eliminated through the unicycle
rollout), with all constraint Jacobians assembled analytically.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from koopguide.dynamics import JointState, V_MAX, V_MIN, W_MAX, W_MIN, step, step_jacobians
from koopguide.environment import Environment, clearance_grad_hess_batch, soft_barrier_batch
from koopguide.errors import CallbackError, IterationLimitError
from koopguide.follower import FollowerWeights, stationarity_batch
from koopguide.leader import LeaderWeights, ObjectiveMode, select_objective
from koopguide.multistart import solve_with_restarts
from koopguide.nlp import NlpProblem, NlpSolution, SolverOptions, VectorConstraint, minimize


@dataclass
class PlanInfo:
    """Per-call planning diagnostics."""

    mode: ObjectiveMode
    converged: bool
    fallback: bool
    objective_value: float
    solve_time: float


class _FocWorkspace:
    """Forward pass shared by objective and constraint callbacks.

    Caches the rollout, control-to-state sensitivities, and the per-stage
    stationarity blocks for the most recent decision vector.
    """

    def __init__(self, x0: JointState, env: Environment, lw: LeaderWeights, fw: FollowerWeights, dt: float,
                 q2: np.ndarray, follower_safety_penalty: bool):
        self.x0 = x0
        self.env = env
        self.lw = lw
        self.fw = fw
        self.dt = dt
        self.q2 = q2
        self.follower_safety_penalty = follower_safety_penalty
        self.T = lw.horizon
        self._key = None
        self._data = None

    def __call__(self, z: np.ndarray) -> dict:
        key = z.tobytes()
        if key != self._key:
            self._data = self._compute(np.asarray(z, dtype=float))
            self._key = key
        return self._data

    def _rollout_with_sensitivity(self, x0: np.ndarray, us: np.ndarray):
        T = self.T
        xs = np.empty((T + 1, 3))
        xs[0] = x0
        phi = np.zeros((T + 1, T, 3, 2))   # phi[t, s] = d x_t / d u_s
        for t in range(T):
            A, B = step_jacobians(xs[t], us[t], self.dt)
            xs[t + 1] = step(xs[t], us[t], self.dt)
            for s in range(t):
                phi[t + 1, s] = A @ phi[t, s]
            phi[t + 1, t] = B
        return xs, phi

    def _compute(self, z: np.ndarray) -> dict:
        T = self.T
        uL = z[: 2 * T].reshape(T, 2)
        uF = z[2 * T :].reshape(T, 2)
        xLs, phiL = self._rollout_with_sensitivity(self.x0.leader, uL)
        xFs, phiF = self._rollout_with_sensitivity(self.x0.follower, uF)
        xd = self.env.destination

        # objective: stage costs t=0..T-1 plus the control-free terminal stage
        dL = xLs - xFs
        eD = xLs - xd
        J = float(((dL * dL) @ self.lw.q1).sum() + ((eD * eD) @ self.q2).sum() + ((uL * uL) @ self.lw.r).sum())
        gL = 2.0 * self.lw.q1 * dL + 2.0 * self.q2 * eD      # dJ/dxL_t, (T+1, 3)
        gF = -2.0 * self.lw.q1 * dL                          # dJ/dxF_t
        if self.follower_safety_penalty:
            bval, bgrad, _ = soft_barrier_batch(self.env.packed, xFs[1:, :2], self.fw.mu)
            J += float(bval.sum())
            gF[1:, :2] += bgrad
        # phi[t, s] = dx_t/du_s is zero for s >= t, so plain einsum sums correctly
        dJ_uL = 2.0 * self.lw.r * uL + np.einsum("ti,tsik->sk", gL, phiL)
        dJ_uF = np.einsum("ti,tsik->sk", gF, phiF)

        # stationarity equality constraints, one 2-vector per stage
        G, dG_duF, dG_dxF, dG_dxL, dG_duL = stationarity_batch(
            xFs[:T], uF, xLs[:T], uL, self.fw, self.env, self.dt
        )
        eq = G.reshape(2 * T)
        jac_L = np.einsum("tij,tsjk->tisk", dG_dxL, phiL[:T])    # (T, 2, T, 2)
        jac_F = np.einsum("tij,tsjk->tisk", dG_dxF, phiF[:T])
        idx = np.arange(T)
        jac_L[idx, :, idx, :] = dG_duL
        jac_F[idx, :, idx, :] = dG_duF
        eq_jac = np.concatenate([jac_L.reshape(2 * T, 2 * T), jac_F.reshape(2 * T, 2 * T)], axis=1)

        # leader clearance inequalities for t = 1..T, all obstacles
        M = len(self.env.obstacles)
        if M:
            c, gc, _ = clearance_grad_hess_batch(self.env.packed, xLs[1:, :2])
            ineq = c.reshape(T * M)
            ineq_jac_L = np.einsum("tmi,tsik->tmsk", gc, phiL[1:, :, :2, :])
            ineq_jac = np.concatenate(
                [ineq_jac_L.reshape(T * M, 2 * T), np.zeros((T * M, 2 * T))], axis=1
            )
        else:
            ineq = np.zeros(0)
            ineq_jac = np.zeros((0, 4 * T))

        return {
            "J": J,
            "dJ": np.concatenate([dJ_uL.ravel(), dJ_uF.ravel()]),
            "eq": eq,
            "eq_jac": eq_jac,
            "ineq": ineq,
            "ineq_jac": ineq_jac,
            "xLs": xLs,
            "xFs": xFs,
        }


def build_foc_problem(
    x0: JointState,
    env: Environment,
    lw: LeaderWeights,
    fw: FollowerWeights,
    dt: float,
    mode: ObjectiveMode | None = None,
    follower_safety_penalty: bool = False,
) -> NlpProblem:
    """Assemble the reduced single-level horizon problem.

    Decision layout: ``[uL_0..uL_{T-1}, uF_0..uF_{T-1}]`` (dimension 4T).
    The guidance mode (hence the active destination weight) is chosen once
    per call from the current leader-follower distance unless given.
    """
    if mode is None:
        mode = select_objective(x0.leader, x0.follower, lw.lam)
    ws = _FocWorkspace(x0, env, lw, fw, dt, lw.q2_for(mode), follower_safety_penalty)
    T = lw.horizon
    lo = np.tile([V_MIN, W_MIN], 2 * T)
    hi = np.tile([V_MAX, W_MAX], 2 * T)
    return NlpProblem(
        dim=4 * T,
        objective=lambda z: ws(z)["J"],
        gradient=lambda z: ws(z)["dJ"],
        eq_constraints=[VectorConstraint(fun=lambda z: ws(z)["eq"], jac=lambda z: ws(z)["eq_jac"])],
        ineq_constraints=[VectorConstraint(fun=lambda z: ws(z)["ineq"], jac=lambda z: ws(z)["ineq_jac"])],
        lower=lo,
        upper=hi,
    )


@dataclass
class FocPlan:
    """Unpacked solution of one model-based planning call."""

    leader_controls: np.ndarray     # (T, 2)
    follower_controls: np.ndarray   # (T, 2)
    leader_states: np.ndarray       # (T+1, 3) predicted rollout incl. x0
    follower_states: np.ndarray
    solution: NlpSolution


def solve_foc(
    x0: JointState,
    env: Environment,
    lw: LeaderWeights,
    fw: FollowerWeights,
    dt: float,
    mode: ObjectiveMode | None = None,
    warm_start: np.ndarray | None = None,
    opts: SolverOptions | None = None,
    follower_safety_penalty: bool = False,
    warm_multipliers=None,
) -> FocPlan:
    """Solve the reduced problem and unpack the control sequences."""
    if mode is None:
        mode = select_objective(x0.leader, x0.follower, lw.lam)
    problem = build_foc_problem(x0, env, lw, fw, dt, mode, follower_safety_penalty)
    T = lw.horizon
    z0 = np.zeros(4 * T) if warm_start is None else np.asarray(warm_start, dtype=float)
    z0 = np.clip(z0, problem.lower, problem.upper)
    sol = minimize(problem, z0, opts, warm=warm_multipliers)
    return _unpack(sol, x0, lw, dt)


def _unpack(sol: NlpSolution, x0: JointState, lw: LeaderWeights, dt: float) -> FocPlan:
    T = lw.horizon
    uL = sol.point[: 2 * T].reshape(T, 2).copy()
    uF = sol.point[2 * T :].reshape(T, 2).copy()
    xLs = np.empty((T + 1, 3))
    xFs = np.empty((T + 1, 3))
    xLs[0], xFs[0] = x0.leader, x0.follower
    for t in range(T):
        xLs[t + 1] = step(xLs[t], uL[t], dt)
        xFs[t + 1] = step(xFs[t], uF[t], dt)
    return FocPlan(uL, uF, xLs, xFs, sol)


class FocPlanner:
    """Receding-horizon wrapper around `solve_foc` with warm starting.

    One instance per episode: it keeps the previous solution and shifts it
    by one step (repeating the last entry) as the next initial guess.
    """

    name = "foc"

    def __init__(self, env, lw, fw, dt, opts: SolverOptions | None = None,
                 follower_safety_penalty: bool = False):
        self.env = env
        self.lw = lw
        self.fw = fw
        self.dt = dt
        self.opts = opts or SolverOptions()
        self.follower_safety_penalty = follower_safety_penalty
        self._warm: np.ndarray | None = None
        self._warm_mult = None

    def reset(self) -> None:
        self._warm = None
        self._warm_mult = None

    def plan(self, x: JointState, mode: ObjectiveMode) -> tuple[np.ndarray, PlanInfo]:
        t0 = time.perf_counter()
        T = self.lw.horizon
        problem = build_foc_problem(
            x, self.env, self.lw, self.fw, self.dt, mode, self.follower_safety_penalty
        )
        z0 = np.zeros(4 * T) if self._warm is None else self._warm
        goal_dist = float(np.hypot(*(x.leader[:2] - self.env.destination[:2])))
        sol, fallback = solve_with_restarts(problem, z0, self.opts, self._warm_mult, T, goal_dist)
        plan = _unpack(sol, x, self.lw, self.dt)
        elapsed = time.perf_counter() - t0
        z = np.concatenate([plan.leader_controls.ravel(), plan.follower_controls.ravel()])
        self._warm = _shift_warm(z, T)
        self._warm_mult = plan.solution.multipliers
        info = PlanInfo(
            mode=mode,
            converged=plan.solution.converged,
            fallback=fallback,
            objective_value=plan.solution.objective_value,
            solve_time=elapsed,
        )
        return plan.leader_controls[0].copy(), info


def _shift_warm(z: np.ndarray, T: int) -> np.ndarray:
    """Shift both control sequences one step forward, repeating the tail."""
    uL = z[: 2 * T].reshape(T, 2)
    uF = z[2 * T :].reshape(T, 2)
    uL = np.vstack([uL[1:], uL[-1]])
    uF = np.vstack([uF[1:], uF[-1]])
    return np.concatenate([uL.ravel(), uF.ravel()])

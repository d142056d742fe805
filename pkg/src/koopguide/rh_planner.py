"""Receding-horizon guidance loop with pluggable follower predictors.

Each step: pick the objective from the current leader-follower distance,
solve the horizon problem that carries the predictor in place of the
follower's true reaction, apply the first leader control, let the real
(grid best response) follower move, repeat until the follower reaches the
destination or budgets run out.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from koopguide.dynamics import JointState, V_MAX, V_MIN, W_MAX, W_MIN, step
from koopguide.environment import Environment, clearance_grad_hess_batch
from koopguide.errors import CallbackError, FollowerTrappedError, IterationLimitError, SchemaError
from koopguide.foc_planner import PlanInfo
from koopguide.follower import FollowerWeights, GridSpec, best_response
from koopguide.leader import LeaderWeights, ObjectiveMode, select_objective
from koopguide.multistart import solve_with_restarts
from koopguide.nlp import NlpProblem, SolverOptions, VectorConstraint, minimize
from koopguide.predictors import BasePredictor

_FORMAT = "koopguide-episode"
_VERSION = 1


def rh_solver_options() -> SolverOptions:
    """Looser optimality for closed-loop speed; feasibility stays tight."""
    return SolverOptions(opt_tol=1e-3, max_outer=15, max_inner=100)


class _LiftedWorkspace:
    """Forward pass of the predictor-driven horizon problem (cached per z)."""

    def __init__(self, x0: JointState, predictor: BasePredictor, env, lw: LeaderWeights, dt, q2):
        self.x0 = x0
        self.pred = predictor
        self.env = env
        self.lw = lw
        self.dt = dt
        self.q2 = q2
        self.T = lw.horizon
        self.s0 = predictor.lift(x0.follower)
        self.C = predictor.decode_matrix()
        self._key = None
        self._data = None

    def __call__(self, z):
        key = z.tobytes()
        if key != self._key:
            self._data = self._compute(np.asarray(z, dtype=float))
            self._key = key
        return self._data

    def _compute(self, z):
        T, dt = self.T, self.dt
        uL = z.reshape(T, 2)
        C = self.C
        nd = self.pred.dim

        xLs = np.empty((T + 1, 3))
        xLs[0] = self.x0.leader
        ss = np.empty((T + 1, nd))
        ss[0] = self.s0
        phiL = np.zeros((T + 1, T, 3, 2))     # d xL_t / d uL_s
        psi = np.zeros((T + 1, T, nd, 2))     # d s_t / d uL_s
        from koopguide.dynamics import step_jacobians

        for t in range(T):
            A, B = step_jacobians(xLs[t], uL[t], dt)
            Js, JxL, JuL = self.pred.advance_jac(ss[t], xLs[t], uL[t])
            ss[t + 1] = self.pred.advance(ss[t], xLs[t], uL[t])
            xLs[t + 1] = step(xLs[t], uL[t], dt)
            for s in range(t):
                phiL[t + 1, s] = A @ phiL[t, s]
                psi[t + 1, s] = Js @ psi[t, s] + JxL @ phiL[t, s]
            phiL[t + 1, t] = B
            psi[t + 1, t] = JuL

        xFs = ss @ C.T
        xd = self.env.destination
        dL = xLs - xFs
        eD = xLs - xd
        J = float(((dL * dL) @ self.lw.q1).sum() + ((eD * eD) @ self.q2).sum() + ((uL * uL) @ self.lw.r).sum())
        gL = 2.0 * self.lw.q1 * dL + 2.0 * self.q2 * eD          # dJ/dxL_t
        gS = (-2.0 * self.lw.q1 * dL) @ C                        # dJ/ds_t, (T+1, nd)
        dJ = 2.0 * self.lw.r * uL + np.einsum("ti,tsik->sk", gL, phiL) + np.einsum("ti,tsik->sk", gS, psi)

        M = len(self.env.obstacles)
        if M:
            c, gc, _ = clearance_grad_hess_batch(self.env.packed, xLs[1:, :2])
            ineq = c.reshape(T * M)
            ineq_jac = np.einsum("tmi,tsik->tmsk", gc, phiL[1:, :, :2, :]).reshape(T * M, 2 * T)
        else:
            ineq = np.zeros(0)
            ineq_jac = np.zeros((0, 2 * T))
        return {"J": J, "dJ": dJ.ravel(), "ineq": ineq, "ineq_jac": ineq_jac, "xLs": xLs, "xFs": xFs}


def build_kp_problem(
    x0: JointState,
    predictor: BasePredictor,
    mode: ObjectiveMode,
    env: Environment,
    lw: LeaderWeights,
    dt: float,
) -> NlpProblem:
    """Leader-only horizon problem over uL (dimension 2T).

    The follower prediction is eliminated by forward substitution of the
    predictor's advance map; constraints are the leader's own clearances.
    """
    ws = _LiftedWorkspace(x0, predictor, env, lw, dt, lw.q2_for(mode))
    T = lw.horizon
    return NlpProblem(
        dim=2 * T,
        objective=lambda z: ws(z)["J"],
        gradient=lambda z: ws(z)["dJ"],
        eq_constraints=[],
        ineq_constraints=[VectorConstraint(fun=lambda z: ws(z)["ineq"], jac=lambda z: ws(z)["ineq_jac"])],
        lower=np.tile([V_MIN, W_MIN], T),
        upper=np.tile([V_MAX, W_MAX], T),
    )


class PredictorPlanner:
    """Receding-horizon leader using any follower predictor."""

    def __init__(self, predictor: BasePredictor, env, lw, dt, opts: SolverOptions | None = None):
        self.predictor = predictor
        self.env = env
        self.lw = lw
        self.dt = dt
        self.opts = opts or rh_solver_options()
        self.name = predictor.name
        self._warm: np.ndarray | None = None
        self._warm_mult = None

    def reset(self) -> None:
        self._warm = None
        self._warm_mult = None

    def plan(self, x: JointState, mode: ObjectiveMode) -> tuple[np.ndarray, PlanInfo]:
        t0 = time.perf_counter()
        problem = build_kp_problem(x, self.predictor, mode, self.env, self.lw, self.dt)
        T = self.lw.horizon
        z0 = np.zeros(2 * T) if self._warm is None else self._warm
        goal_dist = float(np.hypot(*(x.leader[:2] - self.env.destination[:2])))
        sol, fallback = solve_with_restarts(problem, z0, self.opts, self._warm_mult, T, goal_dist)
        elapsed = time.perf_counter() - t0
        uL = sol.point.reshape(T, 2)
        self._warm = np.vstack([uL[1:], uL[-1]]).ravel()
        self._warm_mult = sol.multipliers
        info = PlanInfo(
            mode=mode,
            converged=sol.converged,
            fallback=fallback,
            objective_value=sol.objective_value,
            solve_time=elapsed,
        )
        return uL[0].copy(), info


@dataclass
class GuidanceEpisode:
    """Closed-loop record of one guidance run."""

    planner: str
    dt: float
    reach_tol: float
    outcome: str                      # "reached" | "max_steps" | "infeasible"
    leader_states: np.ndarray         # (K+1, 3)
    follower_states: np.ndarray       # (K+1, 3)
    leader_controls: np.ndarray       # (K, 2)
    follower_controls: np.ndarray     # (K, 2)
    planning_times: np.ndarray        # (K,)
    modes: list[str]                  # (K,)
    fallbacks: list[bool]             # (K,)
    destination: np.ndarray           # (3,)

    @property
    def steps(self) -> int:
        return self.leader_controls.shape[0]

    @property
    def final_distance(self) -> float:
        return float(np.hypot(*(self.follower_states[-1, :2] - self.destination[:2])))


@dataclass
class GuidanceOptions:
    dt: float = 0.2
    reach_tol: float = 0.5
    max_steps: int = 200


def run_guidance(
    x0: JointState,
    planner,
    env: Environment,
    fw: FollowerWeights,
    grid: GridSpec,
    opts: GuidanceOptions | None = None,
) -> GuidanceEpisode:
    """Run the guidance loop until the follower reaches the destination.

    The follower always executes his own exhaustive best response to the
    applied leader control; the planner only predicts him.  Planning time
    records the wall clock around the planner call alone.
    """
    opts = opts or GuidanceOptions()
    lam = planner.lw.lam
    xL = np.asarray(x0.leader, dtype=float).copy()
    xF = np.asarray(x0.follower, dtype=float).copy()
    dest = env.destination
    Ls, Fs = [xL.copy()], [xF.copy()]
    uLs, uFs, times, modes, fallbacks = [], [], [], [], []
    outcome = "max_steps"
    for _ in range(opts.max_steps):
        if np.hypot(*(xF[:2] - dest[:2])) <= opts.reach_tol:
            outcome = "reached"
            break
        mode = select_objective(xL, xF, lam)
        t0 = time.perf_counter()
        uL, info = planner.plan(JointState(xL, xF), mode)
        elapsed = time.perf_counter() - t0
        try:
            uF = best_response(JointState(xL, xF), uL, fw, env, grid, opts.dt)
        except FollowerTrappedError:
            outcome = "infeasible"
            break
        xL = step(xL, uL, opts.dt)
        xF = step(xF, uF, opts.dt)
        Ls.append(xL.copy())
        Fs.append(xF.copy())
        uLs.append(uL)
        uFs.append(uF)
        times.append(elapsed)
        modes.append(mode.value)
        fallbacks.append(bool(info.fallback))
    else:
        if np.hypot(*(xF[:2] - dest[:2])) <= opts.reach_tol:
            outcome = "reached"
    return GuidanceEpisode(
        planner=getattr(planner, "name", "unknown"),
        dt=opts.dt,
        reach_tol=opts.reach_tol,
        outcome=outcome,
        leader_states=np.array(Ls),
        follower_states=np.array(Fs),
        leader_controls=np.array(uLs).reshape(-1, 2),
        follower_controls=np.array(uFs).reshape(-1, 2),
        planning_times=np.array(times),
        modes=modes,
        fallbacks=fallbacks,
        destination=dest.copy(),
    )


def save_episode(e: GuidanceEpisode, path) -> None:
    """One header line, then one line per step (line-oriented JSON)."""
    header = {
        "format": _FORMAT,
        "version": _VERSION,
        "planner": e.planner,
        "dt": e.dt,
        "reach_tol": e.reach_tol,
        "outcome": e.outcome,
        "destination": e.destination.tolist(),
        "x0_leader": e.leader_states[0].tolist(),
        "x0_follower": e.follower_states[0].tolist(),
        "steps": e.steps,
    }
    with open(path, "w") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for k in range(e.steps):
            rec = {
                "t": k,
                "uL": e.leader_controls[k].tolist(),
                "uF": e.follower_controls[k].tolist(),
                "xL": e.leader_states[k + 1].tolist(),
                "xF": e.follower_states[k + 1].tolist(),
                "mode": e.modes[k],
                "fallback": e.fallbacks[k],
                "plan_time": e.planning_times[k],
            }
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def load_episode(path) -> GuidanceEpisode:
    path = Path(path)
    with open(path) as f:
        try:
            header = json.loads(f.readline())
        except json.JSONDecodeError as e:
            raise SchemaError(f"{path}: unreadable episode header: {e}") from e
        if header.get("format") != _FORMAT:
            raise SchemaError(f"{path}: not an episode file")
        if header.get("version") != _VERSION:
            raise SchemaError(f"{path}: unsupported episode version {header.get('version')}")
        Ls = [header["x0_leader"]]
        Fs = [header["x0_follower"]]
        uLs, uFs, times, modes, fallbacks = [], [], [], [], []
        for lineno, line in enumerate(f, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                Ls.append(rec["xL"])
                Fs.append(rec["xF"])
                uLs.append(rec["uL"])
                uFs.append(rec["uF"])
                times.append(rec["plan_time"])
                modes.append(rec["mode"])
                fallbacks.append(bool(rec["fallback"]))
            except (json.JSONDecodeError, KeyError) as e:
                raise SchemaError(f"{path}:{lineno}: malformed step record: {e}") from e
    if len(uLs) != header["steps"]:
        raise SchemaError(f"{path}: header declares {header['steps']} steps, file holds {len(uLs)}")
    return GuidanceEpisode(
        planner=header["planner"],
        dt=float(header["dt"]),
        reach_tol=float(header["reach_tol"]),
        outcome=header["outcome"],
        leader_states=np.array(Ls, dtype=float),
        follower_states=np.array(Fs, dtype=float),
        leader_controls=np.array(uLs, dtype=float).reshape(-1, 2),
        follower_controls=np.array(uFs, dtype=float).reshape(-1, 2),
        planning_times=np.array(times, dtype=float),
        modes=modes,
        fallbacks=fallbacks,
        destination=np.array(header["destination"], dtype=float),
    )

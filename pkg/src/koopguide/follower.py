"""Ground-truth follower: one-step objective, grid best response, feedback step.

The follower is myopic: at each instant he observes the joint state and the
leader's announced control, and picks the control minimizing his one-step
cost subject to hard safety (successor strictly outside every obstacle and
inside the workspace).  The exhaustive grid search is the simulation oracle;
the smooth barrier-penalized variant of the same objective, and its
derivatives, feed the model-based planner's stationarity constraints.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from koopguide import _kernels
from koopguide.dynamics import (
    JointState,
    V_MAX,
    V_MIN,
    W_MAX,
    W_MIN,
    step,
    step_batch,
    step_jacobians,
    step_jacobians_batch,
)
from koopguide.environment import (
    Environment,
    barrier_penalty,
    clearance_hess,
    soft_barrier_batch,
    softlog_d1,
    softlog_d2,
)
from koopguide.errors import BarrierDomainError, FollowerTrappedError, ValidationError


@dataclass(frozen=True)
class FollowerWeights:
    """Diagonal weights of the follower's one-step objective.

    q1 weighs pursuit of the leader's next pose, q2 the pull toward the
    destination, q3 scales the heading-alignment inner product (negative
    rewards alignment), r the control effort, and mu the log-barrier weight
    of the smooth safety penalty.
    """

    q1: np.ndarray
    q2: np.ndarray
    q3: float
    r: np.ndarray
    mu: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "q1", np.ascontiguousarray(self.q1, dtype=float).reshape(3))
        object.__setattr__(self, "q2", np.ascontiguousarray(self.q2, dtype=float).reshape(3))
        object.__setattr__(self, "r", np.ascontiguousarray(self.r, dtype=float).reshape(2))
        if (self.q1 < 0).any() or (self.q2 < 0).any() or (self.r < 0).any():
            raise ValidationError("follower weight diagonals must be non-negative")
        if not self.mu > 0:
            raise ValidationError(f"barrier weight mu must be positive, got {self.mu}")


@dataclass(frozen=True)
class GridSpec:
    """Resolution of the exhaustive control grid over [0,2] x [-2,2]."""

    nv: int = 41
    nw: int = 41

    def __post_init__(self):
        if self.nv < 2 or self.nw < 2:
            raise ValidationError(f"grid needs at least 2 samples per axis, got {self.nv}x{self.nw}")
        object.__setattr__(self, "v_values", np.linspace(V_MIN, V_MAX, self.nv))
        object.__setattr__(self, "w_values", np.linspace(W_MIN, W_MAX, self.nw))


def follower_cost(
    xF: np.ndarray,
    uF: np.ndarray,
    xL: np.ndarray,
    uL: np.ndarray,
    w: FollowerWeights,
    env: Environment,
    dt: float,
) -> float:
    """The follower's plain one-step objective (no safety term).

    `env` supplies the destination only; safety is enforced separately
    (hard constraints in `best_response`, log barrier in the smooth variant).
    The arithmetic mirrors the grid kernels exactly.
    """
    xF1 = step(xF, uF, dt)
    xL1 = step(xL, uL, dt)
    xd = env.destination
    dx = xF1[0] - xL1[0]
    dy = xF1[1] - xL1[1]
    dth = xF1[2] - xL1[2]
    ex = xF1[0] - xd[0]
    ey = xF1[1] - xd[1]
    eth = xF1[2] - xd[2]
    v, om = uF
    return float(
        w.q1[0] * (dx * dx)
        + w.q1[1] * (dy * dy)
        + w.q1[2] * (dth * dth)
        + w.q2[0] * (ex * ex)
        + w.q2[1] * (ey * ey)
        + w.q2[2] * (eth * eth)
        + w.q3 * np.cos(xL1[2] - xF1[2])
        + w.r[0] * (v * v)
        + w.r[1] * (om * om)
    )


def best_response(
    x: JointState,
    uL: np.ndarray,
    w: FollowerWeights,
    env: Environment,
    grid: GridSpec,
    dt: float,
) -> np.ndarray:
    """Exhaustive grid minimizer of `follower_cost` over safe candidates.

    Safety is hard: a candidate control is admissible only if the follower's
    successor stays inside the workspace and has strictly positive clearance
    to every obstacle.  Ties resolve to the lexicographically smallest
    (v, w).  Raises `FollowerTrappedError` when no candidate is safe.
    """
    xLn = step(x.leader, uL, dt)
    idx, _ = _kernels.grid_best_response(
        np.ascontiguousarray(x.follower, dtype=float),
        np.ascontiguousarray(xLn, dtype=float),
        grid.v_values,
        grid.w_values,
        w.q1,
        w.q2,
        float(w.q3),
        w.r,
        np.ascontiguousarray(env.destination, dtype=float),
        env.packed,
        np.ascontiguousarray(env.bounds, dtype=float),
        float(dt),
    )
    if idx < 0:
        raise FollowerTrappedError(
            f"no safe grid candidate for follower at {x.follower.tolist()} (leader control {np.asarray(uL).tolist()})"
        )
    iv, iw = divmod(idx, grid.nw)
    return np.array([grid.v_values[iv], grid.w_values[iw]])


def feedback_step(
    x: JointState,
    uL: np.ndarray,
    w: FollowerWeights,
    env: Environment,
    grid: GridSpec,
    dt: float,
) -> np.ndarray:
    """Follower's next state under his best response to (x, uL)."""
    uF = best_response(x, uL, w, env, grid, dt)
    return step(x.follower, uF, dt)


# --- smooth barrier-penalized objective and its derivatives ------------------

def penalized_cost(xF, uF, xL, uL, w: FollowerWeights, env: Environment, dt: float) -> float:
    """`follower_cost` plus the log-barrier safety penalty at the successor."""
    xF1 = step(xF, uF, dt)
    return follower_cost(xF, uF, xL, uL, w, env, dt) + barrier_penalty(env, xF1[:2], w.mu)


def follower_cost_gradient(uF, xF, xL, uL, w: FollowerWeights, env: Environment, dt: float) -> np.ndarray:
    """Analytic gradient of the barrier-penalized objective in (v, w).

    Raises `BarrierDomainError` when the successor touches an obstacle,
    where the barrier is undefined.
    """
    g, *_ = stationarity(xF, uF, xL, uL, w, env, dt, soft=False, with_jac=False)
    return g


def stationarity(
    xF,
    uF,
    xL,
    uL,
    w: FollowerWeights,
    env: Environment,
    dt: float,
    soft: bool = True,
    with_jac: bool = True,
):
    """Gradient G of the penalized objective in uF, with optional partials.

    Returns ``(G, dG_duF, dG_dxF, dG_dxL, dG_duL)``; the partials are None
    when `with_jac` is false.  With ``soft=True`` the barrier uses the C^2
    extension below `environment.SOFT_DELTA`, keeping the map total for
    planner callbacks; with ``soft=False`` the exact barrier is used and a
    `BarrierDomainError` signals unsafe successors.
    """
    xF = np.asarray(xF, dtype=float)
    uF = np.asarray(uF, dtype=float)
    xL = np.asarray(xL, dtype=float)
    uL = np.asarray(uL, dtype=float)
    xF1 = step(xF, uF, dt)
    xL1 = step(xL, uL, dt)
    AF, BF = step_jacobians(xF, uF, dt)

    # gradient (and Hessian pieces) of the stage terms in the successor state
    dth = xL1[2] - xF1[2]
    sin_d, cos_d = np.sin(dth), np.cos(dth)
    s = 2.0 * w.q1 * (xF1 - xL1) + 2.0 * w.q2 * (xF1 - env.destination)
    s[2] += w.q3 * sin_d

    b_grad = np.zeros(2)
    b_hess = np.zeros((2, 2))
    for j, ob in enumerate(env.obstacles):
        c, gc, Hc = clearance_hess(ob, xF1[:2])
        if soft:
            d1, d2 = softlog_d1(c), softlog_d2(c)
        else:
            if c <= 0:
                raise BarrierDomainError(f"successor clearance to obstacle {j} is {c:.6g} <= 0")
            d1, d2 = 1.0 / c, -1.0 / (c * c)
        b_grad -= d1 * gc
        b_hess -= d2 * np.outer(gc, gc) + d1 * Hc
    b_grad /= w.mu
    b_hess /= w.mu
    s[:2] += b_grad

    G = BF.T @ s + 2.0 * w.r * uF
    if not with_jac:
        return G, None, None, None, None

    # d s / d xF1
    H_FF = np.diag(2.0 * w.q1 + 2.0 * w.q2)
    H_FF[2, 2] += -w.q3 * cos_d
    H_FF[:2, :2] += b_hess
    # d s / d xL1
    H_FL = np.diag(-2.0 * w.q1)
    H_FL[2, 2] += w.q3 * cos_d

    AL, BL = step_jacobians(xL, uL, dt)
    dG_duF = BF.T @ H_FF @ BF + np.diag(2.0 * w.r)
    # BF depends on theta_F: d(BF^T s)/d theta adds a column term
    cf, sf = np.cos(xF[2]), np.sin(xF[2])
    dG_dxF = BF.T @ H_FF @ AF
    dG_dxF[0, 2] += dt * (-sf * s[0] + cf * s[1])
    dG_dxL = BF.T @ H_FL @ AL
    dG_duL = BF.T @ H_FL @ BL
    return G, dG_duF, dG_dxF, dG_dxL, dG_duL


def stationarity_batch(xF, uF, xL, uL, w: FollowerWeights, env: Environment, dt: float):
    """Vectorized `stationarity` (soft barrier, with Jacobians) over T stages.

    Inputs are (T, 3)/(T, 2) stacks; returns ``(G, dG_duF, dG_dxF, dG_dxL,
    dG_duL)`` with a leading stage axis.  Used by the planner hot path; the
    scalar version is the reference implementation.
    """
    xF = np.asarray(xF, dtype=float)
    uF = np.asarray(uF, dtype=float)
    xL = np.asarray(xL, dtype=float)
    uL = np.asarray(uL, dtype=float)
    T = xF.shape[0]
    xF1 = step_batch(xF, uF, dt)
    xL1 = step_batch(xL, uL, dt)
    AF, BF = step_jacobians_batch(xF, uF, dt)
    AL, BL = step_jacobians_batch(xL, uL, dt)

    dth = xL1[:, 2] - xF1[:, 2]
    sin_d, cos_d = np.sin(dth), np.cos(dth)
    s = 2.0 * w.q1 * (xF1 - xL1) + 2.0 * w.q2 * (xF1 - env.destination)
    s[:, 2] += w.q3 * sin_d
    _, b_grad, b_hess = soft_barrier_batch(env.packed, xF1[:, :2], w.mu)
    s[:, :2] += b_grad

    H_FF = np.tile(np.diag(2.0 * w.q1 + 2.0 * w.q2), (T, 1, 1))
    H_FF[:, 2, 2] += -w.q3 * cos_d
    H_FF[:, :2, :2] += b_hess
    H_FL = np.tile(np.diag(-2.0 * w.q1), (T, 1, 1))
    H_FL[:, 2, 2] += w.q3 * cos_d

    G = np.einsum("tji,tj->ti", BF, s) + 2.0 * w.r * uF
    BtH_FF = np.einsum("tji,tjk->tik", BF, H_FF)
    BtH_FL = np.einsum("tji,tjk->tik", BF, H_FL)
    dG_duF = np.einsum("tik,tkl->til", BtH_FF, BF) + np.diag(2.0 * w.r)
    dG_dxF = np.einsum("tik,tkl->til", BtH_FF, AF)
    cf, sf = np.cos(xF[:, 2]), np.sin(xF[:, 2])
    dG_dxF[:, 0, 2] += dt * (-sf * s[:, 0] + cf * s[:, 1])
    dG_dxL = np.einsum("tik,tkl->til", BtH_FL, AL)
    dG_duL = np.einsum("tik,tkl->til", BtH_FL, BL)
    return G, dG_duF, dG_dxF, dG_dxL, dG_duL

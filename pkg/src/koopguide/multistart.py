"""Deterministic multi-start helper for the horizon solves.

Short-horizon planning against nonconvex obstacle pockets has spurious
"freeze" minima (stopping beats driving into the clearance wall).  When a
solution stalls while the leader is still far from its destination, a few
fixed exploratory control seeds (straight, arc left, arc right) are solved
too and the best feasible result wins.  Everything is deterministic: fixed
seed list, fixed evaluation order, ties keep the earlier candidate.
"""
from __future__ import annotations

import numpy as np

from koopguide.errors import CallbackError, IterationLimitError
from koopguide.nlp import NlpProblem, NlpSolution, SolverOptions, minimize

#: planned speeds below this while far from the goal count as a stall
STALL_SPEED = 0.15
STALL_DIST = 1.0


def exploration_seeds(T: int, n_leader_controls: int, total_dim: int) -> list[np.ndarray]:
    """Fixed leader control seeds (zero elsewhere): straight, arcs of two
    sharpnesses each way, and turn-in-place-then-straight each way."""
    seqs = [np.tile([v, w], T) for v, w in ((2.0, 0.0), (2.0, 1.0), (2.0, -1.0), (1.0, 2.0), (1.0, -2.0))]
    for w in (2.0, -2.0):
        turn_then_go = np.tile([2.0, 0.0], T)
        k = max(1, T // 2)
        turn_then_go[: 2 * k] = np.tile([0.0, w], k)
        seqs.append(turn_then_go)
    seeds = []
    for seq in seqs:
        z = np.zeros(total_dim)
        z[:n_leader_controls] = seq[:n_leader_controls]
        seeds.append(z)
    return seeds


def _is_stalled(point: np.ndarray, T: int, leader_dist_to_goal: float) -> bool:
    speeds = np.abs(point[: 2 * T].reshape(T, 2)[:, 0])
    return bool(speeds.max() < STALL_SPEED and leader_dist_to_goal > STALL_DIST)


def _attempt(problem: NlpProblem, z0: np.ndarray, opts: SolverOptions, warm) -> tuple[NlpSolution, bool]:
    try:
        return minimize(problem, np.clip(z0, problem.lower, problem.upper), opts, warm=warm), False
    except (IterationLimitError, CallbackError) as e:
        return e.solution, True


def solve_with_restarts(
    problem: NlpProblem,
    z_warm: np.ndarray,
    opts: SolverOptions,
    warm_multipliers,
    T: int,
    leader_dist_to_goal: float,
    feas_tol: float | None = None,
) -> tuple[NlpSolution, bool]:
    """Warm-started solve, retried from exploration seeds when it stalls.

    Returns ``(solution, fallback)`` where fallback marks solves that ended
    on an error-carried iterate.  Candidates are ranked feasible-first by
    objective value.
    """
    feas_tol = opts.feas_tol if feas_tol is None else feas_tol
    sol, fallback = _attempt(problem, z_warm, opts, warm_multipliers)
    viol = max(sol.max_eq_violation, sol.max_ineq_violation)
    if not (fallback or viol > feas_tol or _is_stalled(sol.point, T, leader_dist_to_goal)):
        return sol, fallback

    candidates = [(sol, fallback)]
    for seed in exploration_seeds(T, 2 * T, problem.dim):
        candidates.append(_attempt(problem, seed, opts, None))

    def rank(entry):
        s, fb = entry
        feasible = max(s.max_eq_violation, s.max_ineq_violation) <= feas_tol
        stalled = _is_stalled(s.point, T, leader_dist_to_goal)
        return (not feasible, fb, stalled, s.objective_value)

    return min(candidates, key=rank)

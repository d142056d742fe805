"""Small deterministic NLP solver for the horizon problems.

Augmented Lagrangian outer loop handling equality and inequality
constraints, with a box-constrained limited-memory quasi-Newton inner
minimizer (scipy's L-BFGS-B).  No randomized steps anywhere: identical
inputs give bit-identical outputs.

Feasibility and optimality reported in the solution are recomputed from
the returned point with the raw callbacks, never read back from solver
internals.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.optimize

from koopguide.errors import CallbackError, IterationLimitError, ValidationError


@dataclass
class VectorConstraint:
    """Differentiable vector map with its Jacobian; rows are scalar constraints."""

    fun: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], np.ndarray]


@dataclass
class NlpProblem:
    dim: int
    objective: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    eq_constraints: list[VectorConstraint] = field(default_factory=list)
    ineq_constraints: list[VectorConstraint] = field(default_factory=list)
    lower: np.ndarray | None = None   # elementwise box; None means unbounded
    upper: np.ndarray | None = None


@dataclass
class SolverOptions:
    feas_tol: float = 1e-4
    opt_tol: float = 1e-4
    penalty0: float = 1.0
    penalty_growth: float = 10.0
    penalty_max: float = 1e8
    max_outer: int = 30
    max_inner: int = 200
    check_grad: bool = False   # debug: finite-difference verification at x0


@dataclass
class MultiplierState:
    """Dual/penalty state carried between consecutive warm-started solves."""

    lam: np.ndarray
    nu: np.ndarray
    rho: float


@dataclass
class NlpSolution:
    point: np.ndarray
    objective_value: float
    max_eq_violation: float
    max_ineq_violation: float
    iterations: int
    converged: bool
    multipliers: MultiplierState | None = None


def _eval_stacked(cons: list[VectorConstraint], z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if not cons:
        return np.zeros(0), np.zeros((0, z.size))
    vals = [np.atleast_1d(np.asarray(c.fun(z), dtype=float)) for c in cons]
    jacs = [np.atleast_2d(np.asarray(c.jac(z), dtype=float)) for c in cons]
    return np.concatenate(vals), np.vstack(jacs)


def _violations(p: NlpProblem, z: np.ndarray) -> tuple[float, float]:
    eq = 0.0
    for c in p.eq_constraints:
        v = np.atleast_1d(c.fun(z))
        if v.size:
            eq = max(eq, float(np.abs(v).max()))
    ineq = 0.0
    for c in p.ineq_constraints:
        v = np.atleast_1d(c.fun(z))
        if v.size:
            ineq = max(ineq, float(np.maximum(-v, 0.0).max()))
    return eq, ineq


def _fd_check(p: NlpProblem, z: np.ndarray, h: float = 1e-6, tol: float = 1e-4) -> None:
    """Debug verification of every supplied derivative at z."""
    g = np.asarray(p.gradient(z), dtype=float)
    fd = np.empty_like(g)
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = h
        fd[i] = (p.objective(z + e) - p.objective(z - e)) / (2 * h)
    scale = max(1.0, float(np.abs(fd).max()))
    if np.abs(g - fd).max() / scale > tol:
        raise ValidationError("objective gradient disagrees with finite differences")
    for kind, cons in (("eq", p.eq_constraints), ("ineq", p.ineq_constraints)):
        for c in cons:
            J = np.atleast_2d(c.jac(z))
            fdJ = np.empty_like(J)
            for i in range(z.size):
                e = np.zeros_like(z)
                e[i] = h
                fdJ[:, i] = (np.atleast_1d(c.fun(z + e)) - np.atleast_1d(c.fun(z - e))) / (2 * h)
            scale = max(1.0, float(np.abs(fdJ).max()))
            if np.abs(J - fdJ).max() / scale > tol:
                raise ValidationError(f"an {kind} constraint Jacobian disagrees with finite differences")


def minimize(
    p: NlpProblem,
    x0: np.ndarray,
    opts: SolverOptions | None = None,
    warm: MultiplierState | None = None,
) -> NlpSolution:
    """Solve min f(z) s.t. eq(z)=0, ineq(z)>=0, lower<=z<=upper.

    `warm` seeds the dual/penalty state from a previous solve of a problem
    with the same constraint dimensions (receding-horizon reuse).

    Raises `IterationLimitError` (carrying the best iterate as a solution)
    when the outer budget is exhausted before both tolerances are met, and
    `CallbackError` (carrying the last good iterate) when a callback fails.
    """
    opts = opts or SolverOptions()
    z = np.array(x0, dtype=float)
    lo = np.full(p.dim, -np.inf) if p.lower is None else np.asarray(p.lower, dtype=float)
    hi = np.full(p.dim, np.inf) if p.upper is None else np.asarray(p.upper, dtype=float)
    if z.size != p.dim:
        raise ValidationError(f"x0 has dimension {z.size}, problem expects {p.dim}")
    if ((z < lo) | (z > hi)).any():
        raise ValidationError("x0 lies outside the box bounds")
    if opts.check_grad:
        _fd_check(p, z)

    n_eq = int(np.concatenate([np.atleast_1d(c.fun(z)) for c in p.eq_constraints]).size) if p.eq_constraints else 0
    n_in = int(np.concatenate([np.atleast_1d(c.fun(z)) for c in p.ineq_constraints]).size) if p.ineq_constraints else 0
    if warm is not None and warm.lam.size == n_eq and warm.nu.size == n_in:
        lam = warm.lam.copy()
        nu = warm.nu.copy()
        rho = float(warm.rho)
    else:
        lam = np.zeros(n_eq)
        nu = np.zeros(n_in)
        rho = float(opts.penalty0)

    def aug_value_grad(zz: np.ndarray) -> tuple[float, np.ndarray]:
        f = float(p.objective(zz))
        g = np.asarray(p.gradient(zz), dtype=float).copy()
        if n_eq:
            h, Jh = _eval_stacked(p.eq_constraints, zz)
            f += float(-lam @ h + 0.5 * rho * (h @ h))
            g += Jh.T @ (rho * h - lam)
        if n_in:
            c, Jc = _eval_stacked(p.ineq_constraints, zz)
            t = np.maximum(0.0, nu - rho * c)
            f += float((t @ t - nu @ nu) / (2.0 * rho))
            g += Jc.T @ (-t)
        return f, g

    def projected_grad_norm(zz: np.ndarray) -> float:
        _, g = aug_value_grad(zz)
        return float(np.abs(zz - np.clip(zz - g, lo, hi)).max())

    def snapshot(zz: np.ndarray, iters: int, converged: bool) -> NlpSolution:
        ev, iv = _violations(p, zz)
        return NlpSolution(
            point=zz.copy(),
            objective_value=float(p.objective(zz)),
            max_eq_violation=ev,
            max_ineq_violation=iv,
            iterations=iters,
            converged=converged,
            multipliers=MultiplierState(lam.copy(), nu.copy(), rho),
        )

    # best-iterate tracking: prefer feasible-with-lowest-objective, else least violation
    def score(zz: np.ndarray) -> tuple[int, float]:
        ev, iv = _violations(p, zz)
        viol = max(ev, iv)
        if viol <= opts.feas_tol:
            return (0, float(p.objective(zz)))
        return (1, viol)

    best_z = z.copy()
    best_score = score(z)
    total_inner = 0
    prev_viol = np.inf

    for outer in range(opts.max_outer):
        try:
            res = scipy.optimize.minimize(
                aug_value_grad,
                z,
                jac=True,
                method="L-BFGS-B",
                bounds=list(zip(lo, hi)),
                options={
                    "maxiter": opts.max_inner,
                    "ftol": 1e-14,
                    "gtol": 0.25 * opts.opt_tol,
                    "maxcor": 20,
                },
            )
        except (FloatingPointError, ValueError) as e:
            raise CallbackError(f"inner solve failed: {e}", snapshot(best_z, total_inner, False)) from e
        z = np.clip(res.x, lo, hi)
        total_inner += int(res.nit)

        sc = score(z)
        if sc < best_score:
            best_score, best_z = sc, z.copy()

        ev, iv = _violations(p, z)
        viol = max(ev, iv)
        if viol <= opts.feas_tol and projected_grad_norm(z) <= opts.opt_tol:
            if score(best_z) < score(z):
                z = best_z.copy()
            return snapshot(z, total_inner, True)

        # multiplier update on sufficient feasibility progress, else grow penalty
        if viol <= max(opts.feas_tol, 0.25 * prev_viol):
            if n_eq:
                h, _ = _eval_stacked(p.eq_constraints, z)
                lam = lam - rho * h
            if n_in:
                c, _ = _eval_stacked(p.ineq_constraints, z)
                nu = np.maximum(0.0, nu - rho * c)
            prev_viol = viol
        else:
            rho = min(rho * opts.penalty_growth, opts.penalty_max)

    raise IterationLimitError(
        f"no convergence within {opts.max_outer} outer iterations (violation {max(_violations(p, best_z)):.3g})",
        snapshot(best_z, total_inner, False),
    )

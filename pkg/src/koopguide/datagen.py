"""Interaction dataset generation, splitting, and serialization.

Every recorded trajectory is exactly reproducible: per-trajectory RNGs are
spawned from the dataset seed, so serial and parallel generation agree
bit for bit.  Loading re-checks both dataset invariants exhaustively:
states chain through the dynamics exactly, and every recorded follower
control re-derives as the grid best response.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from koopguide.config import default_follower_weights
from koopguide.dynamics import JointState, clamp_control, step
from koopguide.environment import Environment, environment_from_dict, environment_to_dict, is_strictly_safe
from koopguide.errors import KoopguideError, SchemaError, ValidationError
from koopguide.follower import FollowerWeights, GridSpec, best_response
from koopguide.trajectory import Trajectory

_FORMAT = "koopguide-dataset"
_VERSION = 1

LEADER_POLICIES = ("random", "waypoint", "mixed", "foc")


@dataclass
class InteractionDataset:
    trajectories: list[Trajectory]
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.trajectories)


def environment_hash(env: Environment) -> str:
    doc = json.dumps(environment_to_dict(env), sort_keys=True)
    return hashlib.sha256(doc.encode()).hexdigest()


def _sample_safe_pose(rng: np.random.Generator, env: Environment, max_attempts: int) -> np.ndarray:
    xmin, xmax, ymin, ymax = env.bounds
    for _ in range(max_attempts):
        p = rng.uniform([xmin, ymin], [xmax, ymax])
        if is_strictly_safe(env, p):
            return np.array([p[0], p[1], rng.uniform(-np.pi, np.pi)])
    raise KoopguideError(f"could not sample a safe pose in {max_attempts} attempts (map too crowded)")


class _WaypointPolicy:
    """Proportional steering toward a random safe waypoint, renewed on arrival."""

    def __init__(self, rng: np.random.Generator, env: Environment, max_attempts: int):
        self.rng = rng
        self.env = env
        self.max_attempts = max_attempts
        self.target = _sample_safe_pose(rng, env, max_attempts)[:2]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        d = self.target - x[:2]
        dist = float(np.hypot(d[0], d[1]))
        if dist < 0.3:
            self.target = _sample_safe_pose(self.rng, self.env, self.max_attempts)[:2]
            d = self.target - x[:2]
            dist = float(np.hypot(d[0], d[1]))
        heading_err = (np.arctan2(d[1], d[0]) - x[2] + np.pi) % (2 * np.pi) - np.pi
        v = 1.5 * dist * max(np.cos(heading_err), 0.0)
        return clamp_control(np.array([v, 2.0 * heading_err]))


def _make_policy(name: str, rng: np.random.Generator, env: Environment, max_attempts: int):
    if name == "random":
        return lambda x: np.array([rng.uniform(0.0, 2.0), rng.uniform(-2.0, 2.0)])
    if name == "waypoint":
        return _WaypointPolicy(rng, env, max_attempts)
    raise ValidationError(f"unknown leader policy {name!r}; expected one of {LEADER_POLICIES}")


def generate_dataset(
    env: Environment,
    n: int,
    s: int,
    leader_policy: str = "mixed",
    seed: int = 0,
    fw: FollowerWeights | None = None,
    grid: GridSpec | None = None,
    dt: float = 0.2,
    max_attempts: int = 1000,
) -> InteractionDataset:
    """Simulate n interaction trajectories of s steps each.

    Initial joint poses are sampled uniformly over the workspace and
    rejection-sampled to be strictly safe; leader controls come from the
    chosen policy, follower controls from the exhaustive grid best
    response.  Deterministic per seed (trajectory i uses the i-th spawned
    child RNG regardless of evaluation order).
    """
    if n < 1 or s < 1:
        raise ValidationError(f"need n >= 1 and s >= 1, got n={n}, s={s}")
    if leader_policy not in ("random", "waypoint", "mixed"):
        if leader_policy == "foc":
            return _generate_foc(env, n, s, seed, fw, grid, dt, max_attempts)
        raise ValidationError(f"unknown leader policy {leader_policy!r}; expected one of {LEADER_POLICIES}")
    fw = fw or default_follower_weights()
    grid = grid or GridSpec()
    children = np.random.SeedSequence(seed).spawn(n)
    trajs = []
    for i in range(n):
        rng = np.random.default_rng(children[i])
        name = leader_policy if leader_policy != "mixed" else ("random", "waypoint")[int(rng.integers(2))]
        policy = _make_policy(name, rng, env, max_attempts)
        trajs.append(_simulate(env, policy, s, rng, fw, grid, dt, max_attempts))
    meta = {
        "format": _FORMAT,
        "version": _VERSION,
        "n": n,
        "s": s,
        "seed": seed,
        "policy": leader_policy,
        "dt": dt,
        "env_hash": environment_hash(env),
        "environment": environment_to_dict(env),
        "follower": {"q1": fw.q1.tolist(), "q2": fw.q2.tolist(), "q3": fw.q3, "r": fw.r.tolist(), "mu": fw.mu},
        "grid": {"nv": grid.nv, "nw": grid.nw},
    }
    return InteractionDataset(trajs, meta)


def _simulate(env, policy, s, rng, fw, grid, dt, max_attempts) -> Trajectory:
    xL = _sample_safe_pose(rng, env, max_attempts)
    xF = _sample_safe_pose(rng, env, max_attempts)
    XL = np.empty((s + 1, 3))
    XF = np.empty((s + 1, 3))
    UL = np.empty((s, 2))
    UF = np.empty((s, 2))
    XL[0], XF[0] = xL, xF
    for t in range(s):
        uL = clamp_control(policy(XL[t]))
        uF = best_response(JointState(XL[t], XF[t]), uL, fw, env, grid, dt)
        UL[t], UF[t] = uL, uF
        XL[t + 1] = step(XL[t], uL, dt)
        XF[t + 1] = step(XF[t], uF, dt)
    return Trajectory(xL=XL, xF=XF, uL=UL, uF=UF)


def _generate_foc(env, n, s, seed, fw, grid, dt, max_attempts) -> InteractionDataset:
    """Data collection with the model-based planner as the leader policy."""
    from koopguide.config import default_leader_weights
    from koopguide.foc_planner import FocPlanner
    from koopguide.leader import select_objective
    from koopguide.nlp import SolverOptions

    fw = fw or default_follower_weights()
    grid = grid or GridSpec()
    lw = default_leader_weights()
    children = np.random.SeedSequence(seed).spawn(n)
    trajs = []
    for i in range(n):
        rng = np.random.default_rng(children[i])
        planner = FocPlanner(env, lw, fw, dt, opts=SolverOptions(opt_tol=1e-2, max_outer=8, max_inner=60))
        xL = _sample_safe_pose(rng, env, max_attempts)
        xF = _sample_safe_pose(rng, env, max_attempts)
        XL = np.empty((s + 1, 3))
        XF = np.empty((s + 1, 3))
        UL = np.empty((s, 2))
        UF = np.empty((s, 2))
        XL[0], XF[0] = xL, xF
        for t in range(s):
            mode = select_objective(XL[t], XF[t], lw.lam)
            uL, _ = planner.plan(JointState(XL[t], XF[t]), mode)
            uF = best_response(JointState(XL[t], XF[t]), uL, fw, env, grid, dt)
            UL[t], UF[t] = uL, uF
            XL[t + 1] = step(XL[t], uL, dt)
            XF[t + 1] = step(XF[t], uF, dt)
        trajs.append(Trajectory(xL=XL, xF=XF, uL=UL, uF=UF))
    meta = {
        "format": _FORMAT,
        "version": _VERSION,
        "n": n,
        "s": s,
        "seed": seed,
        "policy": "foc",
        "dt": dt,
        "env_hash": environment_hash(env),
        "environment": environment_to_dict(env),
        "follower": {"q1": fw.q1.tolist(), "q2": fw.q2.tolist(), "q3": fw.q3, "r": fw.r.tolist(), "mu": fw.mu},
        "grid": {"nv": grid.nv, "nw": grid.nw},
    }
    return InteractionDataset(trajs, meta)


def split_dataset(d: InteractionDataset, train_fraction: float, seed: int = 0):
    """Disjoint trajectory-level partition, sizes within 1 of the fraction."""
    if not 0 < train_fraction < 1:
        raise ValidationError(f"train fraction must lie in (0, 1), got {train_fraction}")
    n = len(d)
    n_train = int(round(train_fraction * n))
    if n_train < 1 or n_train > n - 1:
        raise ValidationError(f"dataset of {n} trajectories is too small to split at {train_fraction}")
    perm = np.random.default_rng(seed).permutation(n)
    pick = lambda idx: InteractionDataset([d.trajectories[i] for i in idx], dict(d.meta))
    return pick(sorted(perm[:n_train])), pick(sorted(perm[n_train:]))


def validate_dataset(d: InteractionDataset, check_best_response: bool = True) -> None:
    """Exhaustively re-check both dataset invariants.

    Raises `ValidationError` naming the first offending trajectory/step.
    """
    meta = d.meta
    dt = float(meta["dt"])
    env = environment_from_dict(meta["environment"])
    if environment_hash(env) != meta["env_hash"]:
        raise ValidationError("environment hash in metadata disagrees with embedded environment")
    fwm = meta["follower"]
    fw = FollowerWeights(q1=fwm["q1"], q2=fwm["q2"], q3=fwm["q3"], r=fwm["r"], mu=fwm["mu"])
    grid = GridSpec(nv=meta["grid"]["nv"], nw=meta["grid"]["nw"])
    for i, tr in enumerate(d.trajectories):
        for t in range(tr.steps):
            if not np.array_equal(tr.xL[t + 1], step(tr.xL[t], tr.uL[t], dt)):
                raise ValidationError(f"trajectory {i} step {t}: leader state is not dynamics-consistent")
            if not np.array_equal(tr.xF[t + 1], step(tr.xF[t], tr.uF[t], dt)):
                raise ValidationError(f"trajectory {i} step {t}: follower state is not dynamics-consistent")
        if check_best_response:
            for t in range(tr.steps):
                uF = best_response(JointState(tr.xL[t], tr.xF[t]), tr.uL[t], fw, env, grid, dt)
                if not np.array_equal(uF, tr.uF[t]):
                    raise ValidationError(
                        f"trajectory {i} step {t}: recorded follower control is not the grid best response"
                    )


def save_dataset(d: InteractionDataset, path) -> None:
    """One JSON metadata line, then one JSON line per trajectory (full precision)."""
    with open(path, "w") as f:
        f.write(json.dumps(d.meta, sort_keys=True) + "\n")
        for tr in d.trajectories:
            rec = {"xL": tr.xL.tolist(), "xF": tr.xF.tolist(), "uL": tr.uL.tolist(), "uF": tr.uF.tolist()}
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def load_dataset(path, validate: bool = True) -> InteractionDataset:
    """Load a dataset file; by default re-validates every invariant."""
    path = Path(path)
    with open(path) as f:
        first = f.readline()
        if not first:
            raise SchemaError(f"{path}: empty dataset file")
        try:
            meta = json.loads(first)
        except json.JSONDecodeError as e:
            raise SchemaError(f"{path}: unreadable metadata line: {e}") from e
        if meta.get("format") != _FORMAT:
            raise SchemaError(f"{path}: not a dataset file")
        if meta.get("version") != _VERSION:
            raise SchemaError(f"{path}: unsupported dataset version {meta.get('version')}")
        trajs = []
        for lineno, line in enumerate(f, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                trajs.append(Trajectory(xL=rec["xL"], xF=rec["xF"], uL=rec["uL"], uF=rec["uF"]))
            except (json.JSONDecodeError, KeyError, ValidationError) as e:
                raise SchemaError(f"{path}:{lineno}: malformed trajectory record: {e}") from e
    if len(trajs) != meta.get("n"):
        raise SchemaError(f"{path}: metadata declares {meta.get('n')} trajectories, file holds {len(trajs)}")
    d = InteractionDataset(trajs, meta)
    if validate:
        validate_dataset(d)
    return d

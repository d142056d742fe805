"""Experiment configuration: defaults, YAML load/save, validation.

The stock weight values and planner constants live here (and in the
checked-in default experiment file) so that the CLI reproduces the default
scenario end-to-end with no flags.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from koopguide.environment import Environment, default_environment, load_environment
from koopguide.errors import SchemaError
from koopguide.follower import FollowerWeights, GridSpec
from koopguide.leader import LeaderWeights
from koopguide.learning.koopman import TrainConfig

DEFAULT_DT = 0.2
DEFAULT_REACH_TOL = 0.5
DEFAULT_MAX_STEPS = 200
#: Leader spawns this offset from the follower when no leader start is given.
DEFAULT_LEADER_OFFSET = (0.4, 0.4)


def default_follower_weights() -> FollowerWeights:
    return FollowerWeights(q1=[10.0, 10.0, 0.0], q2=[0.1, 0.1, 0.0], q3=-1.0, r=[2.0, 0.05], mu=10.0)


def default_leader_weights() -> LeaderWeights:
    return LeaderWeights(
        q1=[2.0, 2.0, 0.0],
        q2_near=[1.0, 1.0, 0.0],
        q2_far=[0.1, 0.1, 0.0],
        r=[2.0, 1.0],
        lam=1.0,
        horizon=5,
    )


#: Stock guidance scenarios: follower start poses aimed at the destination.
DEFAULT_STARTS = {
    "a": (0.0, 8.5, 0.0555),
    "b": (0.5, 3.0, 0.6149),
    "c": (5.5, 0.0, 1.2340),
}


@dataclass
class GuidanceOptions:
    dt: float = DEFAULT_DT
    reach_tol: float = DEFAULT_REACH_TOL
    max_steps: int = DEFAULT_MAX_STEPS


@dataclass
class ExperimentConfig:
    """Everything one experiment needs, resolvable from one YAML file."""

    environment: Environment
    leader: LeaderWeights
    follower: FollowerWeights
    grid: GridSpec
    guidance: GuidanceOptions
    train: TrainConfig
    dataset_n: int = 500
    dataset_s: int = 30
    dataset_policy: str = "mixed"
    seed: int = 0
    out_dir: str = "out"
    env_path: str | None = None


def default_config() -> ExperimentConfig:
    return ExperimentConfig(
        environment=default_environment(),
        leader=default_leader_weights(),
        follower=default_follower_weights(),
        grid=GridSpec(),
        guidance=GuidanceOptions(),
        train=TrainConfig(),
    )


def _weights_from(doc: dict, cls, current):
    if doc is None:
        return current
    merged = {**_weights_dict(current), **doc}
    return cls(**merged)


def _weights_dict(w) -> dict:
    if isinstance(w, FollowerWeights):
        return {"q1": w.q1.tolist(), "q2": w.q2.tolist(), "q3": w.q3, "r": w.r.tolist(), "mu": w.mu}
    return {
        "q1": w.q1.tolist(),
        "q2_near": w.q2_near.tolist(),
        "q2_far": w.q2_far.tolist(),
        "r": w.r.tolist(),
        "lam": w.lam,
        "horizon": w.horizon,
    }


def load_config(path) -> ExperimentConfig:
    """Load an experiment YAML; unspecified sections keep their defaults."""
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise SchemaError(f"cannot parse config {path}: {e}") from e
    if not isinstance(doc, dict):
        raise SchemaError(f"config {path} does not hold a mapping")
    cfg = default_config()
    env_path = doc.get("environment")
    if env_path is not None:
        resolved = (path.parent / env_path) if not Path(env_path).is_absolute() else Path(env_path)
        cfg.environment = load_environment(resolved)
        cfg.env_path = str(resolved)
    cfg.leader = _weights_from(doc.get("leader"), LeaderWeights, cfg.leader)
    cfg.follower = _weights_from(doc.get("follower"), FollowerWeights, cfg.follower)
    if "grid" in doc:
        cfg.grid = GridSpec(**doc["grid"])
    if "guidance" in doc:
        g = doc["guidance"]
        cfg.guidance = GuidanceOptions(
            dt=float(g.get("dt", DEFAULT_DT)),
            reach_tol=float(g.get("reach_tol", DEFAULT_REACH_TOL)),
            max_steps=int(g.get("max_steps", DEFAULT_MAX_STEPS)),
        )
    if "train" in doc:
        t = dict(doc["train"])
        if "hidden" in t:
            t["hidden"] = tuple(t["hidden"])
        base = {k: getattr(cfg.train, k) for k in ("gamma", "epochs", "batch_size", "learning_rate", "seed", "embed_dim", "hidden", "rollout_loss")}
        base.update(t)
        cfg.train = TrainConfig(**base)
    if "dataset" in doc:
        d = doc["dataset"]
        cfg.dataset_n = int(d.get("n", cfg.dataset_n))
        cfg.dataset_s = int(d.get("s", cfg.dataset_s))
        cfg.dataset_policy = str(d.get("policy", cfg.dataset_policy))
    cfg.seed = int(doc.get("seed", cfg.seed))
    cfg.out_dir = str(doc.get("out_dir", cfg.out_dir))
    return cfg

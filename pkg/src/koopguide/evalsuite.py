"""Metrics and experiment drivers; everything lands in CSV files.

Four studies: training statistics over dataset sizes, multi-step
prediction comparison across learners, closed-loop guidance from the stock
starts for every planner, and the paired planning-time/control-cost
comparison that falls out of the guidance records.  Metrics are pure
functions of recorded data; re-running them on saved episodes reproduces
identical numbers.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from koopguide.config import DEFAULT_LEADER_OFFSET, DEFAULT_STARTS, ExperimentConfig
from koopguide.datagen import generate_dataset, split_dataset
from koopguide.dynamics import JointState
from koopguide.errors import KoopguideError, ValidationError
from koopguide.foc_planner import FocPlanner
from koopguide.follower import GridSpec
from koopguide.learning.baselines import fit_dmd, train_one_step_nn
from koopguide.learning.koopman import TrainConfig, koopman_loss, train_koopman
from koopguide.predictors import BasePredictor, DmdPredictor, KoopmanPredictor, NnPredictor
from koopguide.rh_planner import GuidanceEpisode, GuidanceOptions, PredictorPlanner, rh_solver_options, run_guidance, save_episode
from koopguide.trajectory import Trajectory

SUITES = ("training", "prediction", "guidance", "full")


@dataclass
class PredictionReport:
    """Per-trajectory, per-step Euclidean position errors for each predictor."""

    horizon: int
    errors: dict[str, np.ndarray]   # name -> (n_traj, horizon)

    @property
    def n_trajectories(self) -> int:
        return next(iter(self.errors.values())).shape[0] if self.errors else 0


def prediction_error(predictors: dict[str, BasePredictor], truth: list[Trajectory], horizon: int) -> PredictionReport:
    """Roll each predictor along recorded leader data and measure position error.

    Predictions start from each trajectory's initial follower state and use
    the recorded (leader state, leader control) pairs; the error at step k
    is the planar distance to the recorded follower state.
    """
    if any(t.steps < horizon for t in truth):
        raise ValidationError(f"every trajectory needs at least {horizon} steps")
    errors = {}
    for name, pred in predictors.items():
        out = np.empty((len(truth), horizon))
        for i, tr in enumerate(truth):
            est = pred.rollout(tr.xF[0], tr.xL[:horizon], tr.uL[:horizon])
            diff = est[:, :2] - tr.xF[1 : horizon + 1, :2]
            out[i] = np.hypot(diff[:, 0], diff[:, 1])
        errors[name] = out
    return PredictionReport(horizon=horizon, errors=errors)


def cumulative_control_cost(e: GuidanceEpisode, r: np.ndarray) -> np.ndarray:
    """Partial sums of the leader's quadratic control effort."""
    r = np.asarray(r, dtype=float).reshape(2)
    u = e.leader_controls
    return np.cumsum((u * u) @ r)


def summarize_episode(e: GuidanceEpisode) -> dict:
    times = e.planning_times
    return {
        "outcome": e.outcome,
        "steps": e.steps,
        "final_dist_m": e.final_distance,
        "median_plan_time_s": float(np.median(times)) if times.size else 0.0,
        "mean_plan_time_s": float(times.mean()) if times.size else 0.0,
    }


# --- suite driver -------------------------------------------------------------

@dataclass
class SuiteOptions:
    suites: tuple[str, ...] = ("full",)
    n_list: tuple[int, ...] = (100, 200)
    repetitions: int = 2
    prediction_horizon: int = 10
    prediction_trajectories: int = 20
    planners: tuple[str, ...] = ("foc", "koopman", "nn", "dmd")
    guidance_train: TrainConfig | None = None   # stronger schedule for planning models
    save_episodes: bool = True


def _writer(path: Path, headers: list[str]):
    f = open(path, "w", newline="")
    w = csv.writer(f)
    w.writerow(headers)
    return f, w


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def run_experiment_suite(cfg: ExperimentConfig, opts: SuiteOptions, out_dir) -> dict[str, Path]:
    """Run the requested suites; returns the CSV paths written.

    Individual cell failures are recorded in failures.csv and do not abort
    the rest of the suite.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    wanted = set(opts.suites)
    if "full" in wanted:
        wanted = {"training", "prediction", "guidance"}
    unknown = wanted - set(SUITES)
    if unknown:
        raise ValidationError(f"unknown suites {sorted(unknown)}; expected subset of {SUITES}")

    paths: dict[str, Path] = {}
    fail_f, fail_w = _writer(out / "failures.csv", ["suite", "cell", "error"])
    paths["failures"] = out / "failures.csv"
    try:
        if "training" in wanted:
            paths["training"] = _training_suite(cfg, opts, out, fail_w)
        if "prediction" in wanted:
            paths["prediction"] = _prediction_suite(cfg, opts, out, fail_w)
        if "guidance" in wanted:
            ep_path, sum_path = _guidance_suite(cfg, opts, out, fail_w)
            paths["episode"] = ep_path
            paths["summary"] = sum_path
    finally:
        fail_f.close()
    return paths


def _derived_seed(*parts) -> int:
    return int(np.random.SeedSequence(tuple(int(p) for p in parts)).generate_state(1)[0])


def _training_suite(cfg: ExperimentConfig, opts: SuiteOptions, out: Path, fail_w) -> Path:
    f, w = _writer(out / "training.csv", ["n", "rep", "train_loss", "test_loss", "wall_time_s"])
    with f:
        for n in opts.n_list:
            for rep in range(opts.repetitions):
                cell = f"n={n} rep={rep}"
                try:
                    seed = _derived_seed(cfg.seed, 1, n, rep)
                    data = generate_dataset(
                        cfg.environment, n, cfg.dataset_s, cfg.dataset_policy, seed,
                        fw=cfg.follower, grid=cfg.grid, dt=cfg.guidance.dt,
                    )
                    train, test = split_dataset(data, 0.8, seed=seed)
                    tc = TrainConfig(
                        gamma=cfg.train.gamma, epochs=cfg.train.epochs, batch_size=cfg.train.batch_size,
                        learning_rate=cfg.train.learning_rate, seed=seed, embed_dim=cfg.train.embed_dim,
                        hidden=cfg.train.hidden, rollout_loss=cfg.train.rollout_loss,
                        momentum=cfg.train.momentum, standardize=cfg.train.standardize,
                    )
                    t0 = time.perf_counter()
                    model, _ = train_koopman(train, tc)
                    wall = time.perf_counter() - t0
                    w.writerow([
                        n, rep,
                        _fmt(koopman_loss(model, train.trajectories, tc.gamma)),
                        _fmt(koopman_loss(model, test.trajectories, tc.gamma)),
                        _fmt(wall),
                    ])
                except KoopguideError as e:
                    fail_w.writerow(["training", cell, str(e)])
    return out / "training.csv"


def _fit_all(cfg: ExperimentConfig, data, train_cfg: TrainConfig):
    """Koopman + comparison learners on the same training data."""
    koop, _ = train_koopman(data, train_cfg)
    dmd = fit_dmd(data)
    nn, _ = train_one_step_nn(
        data, epochs=train_cfg.epochs, batch_size=train_cfg.batch_size,
        learning_rate=1e-3, seed=train_cfg.seed,
    )
    return {"koopman": KoopmanPredictor(koop), "dmd": DmdPredictor(dmd), "nn": NnPredictor(nn)}


def _prediction_suite(cfg: ExperimentConfig, opts: SuiteOptions, out: Path, fail_w) -> Path:
    f, w = _writer(out / "prediction.csv", ["predictor", "traj_id", "step", "error_m"])
    with f:
        try:
            seed = _derived_seed(cfg.seed, 2)
            need = opts.prediction_trajectories
            data = generate_dataset(
                cfg.environment, max(cfg.dataset_n, 5 * need), cfg.dataset_s, cfg.dataset_policy,
                seed, fw=cfg.follower, grid=cfg.grid, dt=cfg.guidance.dt,
            )
            train, test = split_dataset(data, 0.8, seed=seed)
            if len(test) < need:
                raise ValidationError(f"test split holds {len(test)} < {need} trajectories")
            tc = opts.guidance_train or cfg.train
            preds = _fit_all(cfg, train, tc)
            report = prediction_error(preds, test.trajectories[:need], opts.prediction_horizon)
            for name in sorted(report.errors):
                errs = report.errors[name]
                for i in range(errs.shape[0]):
                    for k in range(report.horizon):
                        w.writerow([name, i, k + 1, _fmt(errs[i, k])])
        except KoopguideError as e:
            fail_w.writerow(["prediction", "all", str(e)])
    return out / "prediction.csv"


def _guidance_suite(cfg: ExperimentConfig, opts: SuiteOptions, out: Path, fail_w) -> tuple[Path, Path]:
    ep_f, ep_w = _writer(out / "episode.csv", [
        "planner", "start_id", "step", "px_l", "py_l", "px_f", "py_f",
        "plan_time_s", "cum_control_cost", "mode",
    ])
    sum_f, sum_w = _writer(out / "summary.csv", [
        "planner", "start_id", "outcome", "steps", "final_dist_m", "median_plan_time_s",
    ])
    try:
        seed = _derived_seed(cfg.seed, 3)
        preds = None
        if set(opts.planners) - {"foc"}:
            data = generate_dataset(
                cfg.environment, cfg.dataset_n, cfg.dataset_s, cfg.dataset_policy, seed,
                fw=cfg.follower, grid=cfg.grid, dt=cfg.guidance.dt,
            )
            preds = _fit_all(cfg, data, opts.guidance_train or cfg.train)
        g_opts = GuidanceOptions(dt=cfg.guidance.dt, reach_tol=cfg.guidance.reach_tol, max_steps=cfg.guidance.max_steps)
        for name in opts.planners:
            for sid, pose in DEFAULT_STARTS.items():
                cell = f"{name}@{sid}"
                try:
                    xF = np.array(pose)
                    xL = xF + np.array([*DEFAULT_LEADER_OFFSET, 0.0])
                    if name == "foc":
                        planner = FocPlanner(cfg.environment, cfg.leader, cfg.follower, g_opts.dt, opts=rh_solver_options())
                    else:
                        planner = PredictorPlanner(preds[name], cfg.environment, cfg.leader, g_opts.dt)
                    episode = run_guidance(JointState(xL, xF), planner, cfg.environment, cfg.follower, cfg.grid, g_opts)
                    _write_episode_rows(ep_w, episode, name, sid, cfg.leader.r)
                    s = summarize_episode(episode)
                    sum_w.writerow([name, sid, s["outcome"], s["steps"], _fmt(s["final_dist_m"]), _fmt(s["median_plan_time_s"])])
                    if opts.save_episodes:
                        save_episode(episode, out / f"episode_{name}_{sid}.jsonl")
                except KoopguideError as e:
                    fail_w.writerow(["guidance", cell, str(e)])
    finally:
        ep_f.close()
        sum_f.close()
    return out / "episode.csv", out / "summary.csv"


def _write_episode_rows(w, e: GuidanceEpisode, planner: str, start_id: str, r: np.ndarray) -> None:
    cum = cumulative_control_cost(e, r)
    w.writerow([planner, start_id, 0, _fmt(e.leader_states[0, 0]), _fmt(e.leader_states[0, 1]),
                _fmt(e.follower_states[0, 0]), _fmt(e.follower_states[0, 1]), _fmt(0.0), _fmt(0.0), "init"])
    for k in range(e.steps):
        w.writerow([
            planner, start_id, k + 1,
            _fmt(e.leader_states[k + 1, 0]), _fmt(e.leader_states[k + 1, 1]),
            _fmt(e.follower_states[k + 1, 0]), _fmt(e.follower_states[k + 1, 1]),
            _fmt(e.planning_times[k]), _fmt(cum[k]), e.modes[k],
        ])

"""Command-line interface: gen-data | train | plan | eval.

Exit codes: 0 success, 1 usage error, 2 validation error, 3 runtime error.
Errors print a single machine-parseable line ``error: <kind>: <message>``
on stderr.  The output directory resolves as: ``--out-dir`` flag, else the
KOOPGUIDE_OUT_DIR environment variable, else ``./out``.
"""
from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from koopguide import config as cfgmod
from koopguide.datagen import LEADER_POLICIES, generate_dataset, load_dataset, save_dataset
from koopguide.dynamics import JointState
from koopguide.environment import is_strictly_safe, load_environment
from koopguide.errors import KoopguideError, SchemaError, ValidationError
from koopguide.evalsuite import SUITES, SuiteOptions, run_experiment_suite
from koopguide.foc_planner import FocPlanner
from koopguide.learning.baselines import fit_dmd, train_one_step_nn
from koopguide.learning.checkpoint import load_any_model, save_dmd, save_model, save_one_step_nn
from koopguide.learning.koopman import KoopmanModel, TrainConfig, train_koopman
from koopguide.learning.baselines import DmdModel, OneStepNnModel
from koopguide.predictors import DmdPredictor, KoopmanPredictor, NnPredictor
from koopguide.rh_planner import PredictorPlanner, rh_solver_options, run_guidance, save_episode
from koopguide.rh_planner import GuidanceOptions as RhOptions

USAGE_EXIT, VALIDATION_EXIT, RUNTIME_EXIT = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: usage: {message}", file=sys.stderr)
        raise SystemExit(USAGE_EXIT)


def _out_dir(args) -> Path:
    if getattr(args, "out_dir", None):
        d = Path(args.out_dir)
    elif os.environ.get("KOOPGUIDE_OUT_DIR"):
        d = Path(os.environ["KOOPGUIDE_OUT_DIR"])
    else:
        d = Path("out")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _load_cfg(args) -> cfgmod.ExperimentConfig:
    cfg = cfgmod.load_config(args.config) if getattr(args, "config", None) else cfgmod.default_config()
    if getattr(args, "env", None):
        cfg.environment = load_environment(args.env)
    return cfg


def _parse_pose(text: str) -> np.ndarray:
    parts = text.split(",")
    if len(parts) != 3:
        raise ValidationError(f"pose must be 'x,y,theta', got {text!r}")
    try:
        return np.array([float(p) for p in parts])
    except ValueError as e:
        raise ValidationError(f"pose {text!r} holds a non-numeric field") from e


def build_parser() -> _Parser:
    p = _Parser(prog="koopguide", description="Leader-follower guidance with learned follower models.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="simulate an interaction dataset", parents=[], add_help=True)
    g.add_argument("--env", help="environment YAML (default: packaged map)")
    g.add_argument("--config", help="experiment config YAML")
    g.add_argument("--n", type=int, default=500, help="number of trajectories (default 500)")
    g.add_argument("--s", type=int, default=30, help="steps per trajectory (default 30)")
    g.add_argument("--seed", type=int, default=0, help="dataset seed (default 0)")
    g.add_argument("--policy", choices=LEADER_POLICIES, default="mixed", help="leader data policy (default mixed)")
    g.add_argument("--dt", type=float, default=cfgmod.DEFAULT_DT, help="sampling period (default 0.2)")
    g.add_argument("--out", help="dataset file (default <out-dir>/dataset.jsonl)")
    g.add_argument("--out-dir", help="output directory")

    t = sub.add_parser("train", help="fit a follower-reaction model from a dataset")
    t.add_argument("--data", required=True, help="dataset file from gen-data")
    t.add_argument("--method", choices=("koopman", "dmd", "nn"), default="koopman")
    t.add_argument("--epochs", type=int, help="training epochs (koopman/nn)")
    t.add_argument("--lr", type=float, help="learning rate")
    t.add_argument("--batch-size", type=int, help="minibatch size")
    t.add_argument("--gamma", type=float, help="multi-step decay (koopman)")
    t.add_argument("--momentum", type=float, help="SGD momentum (koopman)")
    t.add_argument("--qh", type=int, help="embedding width (koopman)")
    t.add_argument("--rollout-loss", action="store_true", help="train on lifted-rollout residuals")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--no-validate", action="store_true", help="skip dataset invariant revalidation")
    t.add_argument("--config", help="experiment config YAML (training defaults)")
    t.add_argument("--out", help="checkpoint file (default <out-dir>/model_<method>.ckpt)")
    t.add_argument("--out-dir", help="output directory")

    pl = sub.add_parser("plan", help="run one closed-loop guidance episode")
    pl.add_argument("--planner", choices=("foc", "koopman", "nn", "dmd"), default="koopman")
    pl.add_argument("--model", help="model checkpoint (required unless --planner foc)")
    pl.add_argument("--start", required=True, help="follower start pose 'x,y,theta'")
    pl.add_argument("--leader-start", help="leader start pose (default: follower + fixed offset)")
    pl.add_argument("--env", help="environment YAML")
    pl.add_argument("--config", help="experiment config YAML")
    pl.add_argument("--reach-tol", type=float, help="success distance to destination")
    pl.add_argument("--max-steps", type=int, help="step budget")
    pl.add_argument("--dt", type=float, help="sampling period")
    pl.add_argument("--out", help="episode file (default <out-dir>/episode_<planner>.jsonl)")
    pl.add_argument("--out-dir", help="output directory")

    e = sub.add_parser("eval", help="run the experiment suites, writing CSV metrics")
    e.add_argument("--suite", choices=SUITES, default="full")
    e.add_argument("--config", help="experiment config YAML")
    e.add_argument("--env", help="environment YAML override")
    e.add_argument("--n-list", help="comma-separated dataset sizes for the training study")
    e.add_argument("--reps", type=int, help="repetitions per dataset size")
    e.add_argument("--planners", help="comma-separated planners for the guidance study")
    e.add_argument("--out-dir", help="output directory")
    return p


def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args)
    data = generate_dataset(
        cfg.environment, args.n, args.s, args.policy, args.seed,
        fw=cfg.follower, grid=cfg.grid, dt=args.dt,
    )
    out = Path(args.out) if args.out else _out_dir(args) / "dataset.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(data, out)
    print(f"wrote {out} ({args.n} trajectories x {args.s} steps, policy={args.policy}, seed={args.seed})")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    data = load_dataset(args.data, validate=not args.no_validate)
    out = Path(args.out) if args.out else _out_dir(args) / f"model_{args.method}.ckpt"
    out.parent.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    if args.method == "koopman":
        base = cfg.train
        tc = TrainConfig(
            gamma=args.gamma if args.gamma is not None else base.gamma,
            epochs=args.epochs if args.epochs is not None else base.epochs,
            batch_size=args.batch_size if args.batch_size is not None else base.batch_size,
            learning_rate=args.lr if args.lr is not None else base.learning_rate,
            seed=args.seed,
            embed_dim=args.qh if args.qh is not None else base.embed_dim,
            hidden=base.hidden,
            rollout_loss=args.rollout_loss or base.rollout_loss,
            momentum=args.momentum if args.momentum is not None else base.momentum,
            standardize=base.standardize,
        )
        model, history = train_koopman(data, tc)
        save_model(model, out)
        _write_curve(out, history["epoch_losses"])
        print(f"wrote {out} (loss {history['initial_loss']:.6g} -> {history['final_loss']:.6g}, "
              f"{time.perf_counter() - t0:.1f}s)")
    elif args.method == "dmd":
        model = fit_dmd(data)
        save_dmd(model, out)
        print(f"wrote {out} (rms residual {model.residual:.6g}, {time.perf_counter() - t0:.2f}s)")
    else:
        model, history = train_one_step_nn(
            data,
            epochs=args.epochs if args.epochs is not None else 300,
            batch_size=args.batch_size if args.batch_size is not None else 32,
            learning_rate=args.lr if args.lr is not None else 1e-3,
            seed=args.seed,
        )
        save_one_step_nn(model, out)
        _write_curve(out, history["epoch_losses"])
        print(f"wrote {out} (final epoch loss {history['epoch_losses'][-1]:.6g}, "
              f"{time.perf_counter() - t0:.1f}s)")
    return 0


def _write_curve(ckpt_path: Path, losses) -> None:
    curve = ckpt_path.with_suffix(ckpt_path.suffix + ".curve.csv")
    with open(curve, "w") as f:
        f.write("epoch,loss\n")
        for i, v in enumerate(losses):
            f.write(f"{i},{v!r}\n")


def cmd_plan(args) -> int:
    cfg = _load_cfg(args)
    env = cfg.environment
    xF = _parse_pose(args.start)
    xL = _parse_pose(args.leader_start) if args.leader_start else xF + np.array([*cfgmod.DEFAULT_LEADER_OFFSET, 0.0])
    for who, pose in (("follower", xF), ("leader", xL)):
        if not is_strictly_safe(env, pose[:2]):
            raise ValidationError(f"{who} start {pose[:2].tolist()} is inside an obstacle or out of bounds")
    dt = args.dt if args.dt is not None else cfg.guidance.dt
    opts = RhOptions(
        dt=dt,
        reach_tol=args.reach_tol if args.reach_tol is not None else cfg.guidance.reach_tol,
        max_steps=args.max_steps if args.max_steps is not None else cfg.guidance.max_steps,
    )
    if args.planner == "foc":
        planner = FocPlanner(env, cfg.leader, cfg.follower, dt, opts=rh_solver_options())
    else:
        if not args.model:
            raise ValidationError(f"--model is required for planner {args.planner!r}")
        model = load_any_model(args.model)
        wrap = {
            "koopman": (KoopmanModel, KoopmanPredictor),
            "dmd": (DmdModel, DmdPredictor),
            "nn": (OneStepNnModel, NnPredictor),
        }[args.planner]
        if not isinstance(model, wrap[0]):
            raise ValidationError(f"checkpoint {args.model} holds a {type(model).__name__}, not a {args.planner} model")
        planner = PredictorPlanner(wrap[1](model), env, cfg.leader, dt)
    episode = run_guidance(JointState(xL, xF), planner, env, cfg.follower, cfg.grid, opts)
    out = Path(args.out) if args.out else _out_dir(args) / f"episode_{args.planner}.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_episode(episode, out)
    med = float(np.median(episode.planning_times)) if episode.steps else 0.0
    print(f"{args.planner}: outcome={episode.outcome} steps={episode.steps} "
          f"final_dist={episode.final_distance:.3f} median_plan_time={med:.4f}s -> {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    opts = SuiteOptions(suites=(args.suite,))
    if args.n_list:
        opts.n_list = tuple(int(v) for v in args.n_list.split(","))
    if args.reps is not None:
        opts.repetitions = args.reps
    if args.planners:
        opts.planners = tuple(args.planners.split(","))
    paths = run_experiment_suite(cfg, opts, _out_dir(args))
    for kind in sorted(paths):
        print(f"wrote {paths[kind]}")
    return 0


_COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "plan": cmd_plan, "eval": cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except SystemExit as e:
        return int(e.code or 0)
    except (ValidationError, SchemaError) as e:
        print(f"error: validation: {e}", file=sys.stderr)
        return VALIDATION_EXIT
    except KoopguideError as e:
        print(f"error: runtime: {e}", file=sys.stderr)
        return RUNTIME_EXIT
    except OSError as e:
        print(f"error: io: {e}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())

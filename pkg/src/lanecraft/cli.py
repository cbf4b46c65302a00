"""Command line entry point.

Commands:
    gen-expert   play scripted-expert episodes and write a macro dataset
    train-bc     behaviour-clone the macro classifier from a dataset
    train        PPO training (hierarchical by default; --no-macro for flat)
    eval         play games greedily from a checkpoint and report win rates
    ablate       train + evaluate the full method and each single ablation

All commands accept --config PATH (key = value lines mirroring the flags)
and --seed N; flags win over the file. Outputs land under --out.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import bench
from .config import default_config
from .macro import BCModel, DemoDataset, MACRO_NAMES, generate_dataset, train_bc


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mode", choices=["1v1", "5v5"], default=None)
    p.add_argument("--opponent", choices=["entry", "easy", "medium"], default=None)
    p.add_argument("--out", dest="out_dir", default=None, help="output directory")


def _add_switches(p: argparse.ArgumentParser) -> None:
    p.add_argument("--no-macro", dest="use_macro", action="store_false",
                   default=None, help="flat PPO baseline without the macro layer")
    p.add_argument("--no-global-reward", dest="use_global_reward",
                   action="store_false", default=None,
                   help="drop team tower/death reward terms (rho2 = 0)")
    p.add_argument("--no-self-learning", dest="use_self_learning",
                   action="store_false", default=None,
                   help="disable the episodic-memory loss terms")
    p.add_argument("--no-multi-agent", dest="multi_agent", action="store_false",
                   default=None, help="5v5 without parameter sharing")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lanecraft",
        description="Hierarchical macro/micro RL benchmark on a lane-pushing game")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-expert", help="generate a macro demonstration dataset")
    _add_common(p)
    p.add_argument("--episodes", type=int, default=None, dest="expert_episodes")
    p.add_argument("--dataset", default=None, help="output dataset path")
    p.add_argument("--csv", default=None, help="also export the dataset as CSV")

    p = sub.add_parser("train-bc", help="train the macro classifier")
    _add_common(p)
    p.add_argument("--dataset", default=None, help="input dataset path")
    p.add_argument("--bc-model", dest="bc_model", default=None,
                   help="output model path")
    p.add_argument("--epochs", type=int, default=None, dest="bc_epochs")
    p.add_argument("--lr", type=float, default=None, dest="bc_lr")

    p = sub.add_parser("train", help="train the policy")
    _add_common(p)
    _add_switches(p)
    p.add_argument("--bc-model", dest="bc_model", default=None)
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--episodes", type=int, default=None,
                   help="stop after this many finished episodes")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--steps-per-worker", type=int, default=None,
                   dest="steps_per_worker")
    p.add_argument("--lr", type=float, default=None, dest="learning_rate")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_common(p)
    _add_switches(p)
    p.add_argument("--bc-model", dest="bc_model", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--games", type=int, default=None)

    p = sub.add_parser("ablate", help="run the ablation grid")
    _add_common(p)
    p.add_argument("--bc-model", dest="bc_model", default=None)
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--steps-per-worker", type=int, default=None,
                   dest="steps_per_worker")
    p.add_argument("--games", type=int, default=None, dest="eval_games")
    p.add_argument("--seeds", default=None,
                   help="comma-separated training seeds (default: the run seed)")
    return parser


def _run_config(args: argparse.Namespace) -> bench.RunConfig:
    overrides = {k: v for k, v in vars(args).items()
                 if k not in ("command", "config", "csv", "checkpoint", "seeds",
                              "games") and v is not None}
    return bench.load_run_config(args.config, **overrides)


def cmd_gen_expert(args) -> int:
    run = _run_config(args)
    cfg = default_config(run.mode, seed=run.seed)
    dataset = generate_dataset(cfg, episodes=run.expert_episodes, seed=run.seed,
                               opponent_level=run.opponent,
                               replan_period=run.replan_period)
    path = Path(run.dataset or (Path(run.out_dir) / "expert.demo"))
    path.parent.mkdir(parents=True, exist_ok=True)
    dataset.save(path)
    if args.csv:
        dataset.to_csv(args.csv)
    hist = {MACRO_NAMES[k]: int((dataset.kinds == k).sum())
            for k in range(len(MACRO_NAMES))}
    print(f"wrote {path} ({len(dataset.kinds)} records, "
          f"{dataset.feature_dim} features)")
    print("label histogram: " + ", ".join(f"{k}={v}" for k, v in hist.items()))
    return 0


def cmd_train_bc(args) -> int:
    run = _run_config(args)
    if not run.dataset:
        print("error: --dataset is required (generate one with gen-expert)",
              file=sys.stderr)
        return 2
    dataset = DemoDataset.load(run.dataset)
    model, metrics = train_bc(dataset, epochs=run.bc_epochs, lr=run.bc_lr,
                              seed=run.seed)
    path = Path(run.bc_model or (Path(run.out_dir) / "bc_model.npz"))
    path.parent.mkdir(parents=True, exist_ok=True)
    model.save(path)
    print(f"wrote {path}")
    print(f"train accuracy={metrics['train_accuracy']:.4f} "
          f"test accuracy={metrics['test_accuracy']:.4f}")
    return 0


def cmd_train(args) -> int:
    run = _run_config(args)
    result = bench.train(run)
    print(f"trained {result.episodes_done} episodes -> {result.out_dir}")
    print(f"final checkpoint: {result.final_checkpoint}")
    return 0


def cmd_eval(args) -> int:
    run = _run_config(args)
    games = args.games if args.games is not None else run.games
    report = bench.evaluate_checkpoint(run, args.checkpoint, games, run.seed)
    out = Path(run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval_report.csv").write_text(report.to_csv())
    print(f"win rate {report.win_rate:.3f} "
          f"({report.wins}/{report.games}, 95% CI "
          f"[{report.ci_low:.3f}, {report.ci_high:.3f}])")
    print(f"mean episode reward {report.mean_episode_reward:.3f}, "
          f"mean length {report.mean_episode_length:.1f}")
    return 0


def cmd_ablate(args) -> int:
    run = _run_config(args)
    seeds = ([int(s) for s in args.seeds.split(",")] if args.seeds
             else [run.seed])
    table, results = bench.ablate(run, seeds=seeds)
    print(f"wrote {table}")
    for name, rates in results.items():
        print(f"  {name}: mean {np.mean(rates):.3f} ({rates})")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "gen-expert": cmd_gen_expert,
        "train-bc": cmd_train_bc,
        "train": cmd_train,
        "eval": cmd_eval,
        "ablate": cmd_ablate,
    }
    try:
        return handlers[args.command](args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

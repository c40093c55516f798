"""Command-line entry point: train, eval, ablate, k-sweep,
export-embeddings, and plot."""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .config import ALGOS, RunConfig, config_from_dict, load_config
from .embeddings import collect_embedding_rows, depth_distance_samples, read_embeddings, write_embeddings
from .envs import make_env
from .persist import load_checkpoint, read_metrics
from .plotting import plot_embeddings, plot_k_sweep, plot_training_curves
from .runner import evaluate, train_run

_LIST_FIELDS = {"payoff"}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    for f in dataclasses.fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name in _LIST_FIELDS:
            parser.add_argument(flag, type=json.loads, default=None, help="JSON value")
        elif f.name == "episode_limit":
            parser.add_argument(flag, type=int, default=None)
        else:
            parser.add_argument(flag, type=type(f.default), default=None)


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides = {}
    for f in dataclasses.fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            overrides[f.name] = value
    if args.config:
        return load_config(args.config, overrides)
    return config_from_dict(overrides)


def _default_run_dir(config: RunConfig) -> Path:
    return Path("runs") / f"{config.algo}-{config.env}-seed{config.seed}"


def _cmd_train(args) -> int:
    config = _resolve_config(args)
    run_dir = Path(args.run_dir) if args.run_dir else _default_run_dir(config)
    rows = train_run(config, run_dir)
    final = rows[-1]
    print(f"run dir: {run_dir}")
    print(f"final median return {final.eval_return_median:.3f} "
          f"[{final.eval_return_q25:.3f}, {final.eval_return_q75:.3f}] "
          f"after {final.env_steps} env steps / {final.episodes} episodes")
    return 0


def _cmd_eval(args) -> int:
    if args.episodes < 1:
        raise SystemExit("--episodes must be >= 1")
    learner, config, counters = load_checkpoint(args.checkpoint)
    env = make_env(config)
    summary = evaluate(env, learner, args.episodes, np.random.default_rng(args.seed))
    summary.pop("returns")
    summary["env_steps_trained"] = counters["env_steps"]
    print(json.dumps(summary, indent=2))
    if args.out:
        Path(args.out).write_text(json.dumps(summary, indent=2) + "\n")
    return 0


def _cmd_ablate(args) -> int:
    if args.variant not in ("qmix-rs", "qmix-ls"):
        raise SystemExit(f"unknown ablation variant {args.variant!r}; choose qmix-rs or qmix-ls")
    args.algo = args.variant
    return _cmd_train(args)


def _cmd_k_sweep(args) -> int:
    k_values = [int(v) for v in args.k_values.split(",") if v.strip()]
    seeds = [int(v) for v in args.seeds.split(",") if v.strip()]
    if not k_values:
        raise SystemExit("--k-values must name at least one horizon")
    sweep_dir = Path(args.run_dir) if args.run_dir else Path("runs") / "k_sweep"
    sweep_dir.mkdir(parents=True, exist_ok=True)

    table: List[dict] = []
    for k in k_values:
        finals = []
        for seed in seeds:
            args.k, args.seed = k, seed
            config = _resolve_config(args)
            rows = train_run(config, sweep_dir / f"k{k}-seed{seed}")
            finals.append(rows[-1].eval_return_median)
        q25, median, q75 = np.percentile(finals, [25, 50, 75])
        table.append({
            "k": k,
            "median": float(median),
            "q25": float(q25),
            "q75": float(q75),
            "per_seed": finals,
        })

    csv_path = sweep_dir / "k_sweep.csv"
    with open(csv_path, "w") as fh:
        fh.write("k,median,q25,q75," + ",".join(f"seed{s}" for s in seeds) + "\n")
        for row in table:
            per_seed = ",".join(repr(v) for v in row["per_seed"])
            fh.write(f"{row['k']},{row['median']!r},{row['q25']!r},{row['q75']!r},{per_seed}\n")
    plot_k_sweep(table, sweep_dir / "k_sweep.png")

    print(f"{'k':>4} {'median':>10} {'q25':>10} {'q75':>10}")
    for row in table:
        print(f"{row['k']:>4} {row['median']:>10.3f} {row['q25']:>10.3f} {row['q75']:>10.3f}")
    print(f"table: {csv_path}")
    return 0


def _cmd_export_embeddings(args) -> int:
    learner, config, _ = load_checkpoint(args.checkpoint)
    if config.algo != "mbvd":
        raise SystemExit(f"embedding export needs an mbvd checkpoint, got algo {config.algo!r}")
    if args.episodes < 1:
        raise SystemExit("--episodes must be >= 1")
    env = make_env(config)
    data = collect_embedding_rows(learner, env, args.episodes, np.random.default_rng(args.seed))
    out = Path(args.out)
    write_embeddings(out, data)
    depths, dists = depth_distance_samples(data)
    print(f"wrote {len(data['rows'])} rows to {out}")
    for depth in sorted(set(depths.tolist())):
        sel = dists[depths == depth]
        print(f"  depth {depth}: mean imagined-vs-real distance {sel.mean():.4f} over {len(sel)} samples")
    return 0


def _cmd_plot(args) -> int:
    made = []
    if args.run_dir:
        run_dir = Path(args.run_dir)
        rows = read_metrics(run_dir / "metrics.jsonl")
        out = Path(args.out) if args.out else run_dir
        out.mkdir(parents=True, exist_ok=True)
        made.append(plot_training_curves(rows, out / "training_curves.png", title=run_dir.name))
    if args.metrics:
        rows = read_metrics(args.metrics)
        out = Path(args.out) if args.out else Path(args.metrics).parent
        out.mkdir(parents=True, exist_ok=True)
        made.append(plot_training_curves(rows, out / "training_curves.png"))
    if args.embeddings:
        data = read_embeddings(args.embeddings)
        out = Path(args.out) if args.out else Path(args.embeddings).parent
        out.mkdir(parents=True, exist_ok=True)
        made.append(plot_embeddings(data, out / "embeddings.png", method=args.projection))
    if args.sweep:
        table = []
        lines = Path(args.sweep).read_text().splitlines()
        for line in lines[1:]:
            parts = line.split(",")
            table.append({"k": int(parts[0]), "median": float(parts[1]), "q25": float(parts[2]), "q75": float(parts[3])})
        out = Path(args.out) if args.out else Path(args.sweep).parent
        out.mkdir(parents=True, exist_ok=True)
        made.append(plot_k_sweep(table, out / "k_sweep.png"))
    if not made:
        raise SystemExit("nothing to plot: pass --run-dir, --metrics, --embeddings, or --sweep")
    for path in made:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latentmix")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one configuration")
    p_train.add_argument("--config", type=str, default=None, help="flat JSON config file")
    p_train.add_argument("--run-dir", type=str, default=None)
    _add_config_flags(p_train)
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    p_eval.add_argument("--checkpoint", type=str, required=True)
    p_eval.add_argument("--episodes", type=int, default=32)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--out", type=str, default=None)
    p_eval.set_defaults(func=_cmd_eval)

    p_ablate = sub.add_parser("ablate", help="train a qmix-rs / qmix-ls ablation variant")
    p_ablate.add_argument("--variant", type=str, required=True)
    p_ablate.add_argument("--config", type=str, default=None)
    p_ablate.add_argument("--run-dir", type=str, default=None)
    _add_config_flags(p_ablate)
    p_ablate.set_defaults(func=_cmd_ablate)

    p_sweep = sub.add_parser("k-sweep", help="train across rollout horizons and tabulate finals")
    p_sweep.add_argument("--k-values", type=str, default="1,3,5")
    p_sweep.add_argument("--seeds", type=str, default="0")
    p_sweep.add_argument("--config", type=str, default=None)
    p_sweep.add_argument("--run-dir", type=str, default=None)
    _add_config_flags(p_sweep)
    p_sweep.set_defaults(func=_cmd_k_sweep)

    p_emb = sub.add_parser("export-embeddings", help="dump real vs imagined latents from an mbvd checkpoint")
    p_emb.add_argument("--checkpoint", type=str, required=True)
    p_emb.add_argument("--episodes", type=int, default=4)
    p_emb.add_argument("--seed", type=int, default=0)
    p_emb.add_argument("--out", type=str, required=True)
    p_emb.set_defaults(func=_cmd_export_embeddings)

    p_plot = sub.add_parser("plot", help="render figures from run artifacts")
    p_plot.add_argument("--run-dir", type=str, default=None)
    p_plot.add_argument("--metrics", type=str, default=None)
    p_plot.add_argument("--embeddings", type=str, default=None)
    p_plot.add_argument("--sweep", type=str, default=None)
    p_plot.add_argument("--projection", type=str, default="pca", choices=("pca", "tsne"))
    p_plot.add_argument("--out", type=str, default=None)
    p_plot.set_defaults(func=_cmd_plot)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

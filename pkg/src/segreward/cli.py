"""Command-line entry points.

Subcommands:
  demos         collect scripted expert demonstrations into a JSONL dataset
  train-reward  fit the subtask-conditioned reward on one or more datasets
  eval-epic     canonicalized distance between a checkpoint and the
                segmentation oracle, with a random-init control
  train-rl      actor-critic training against a chosen reward source
  report        aggregate metrics/curve CSVs in a directory into markdown

Exit codes: 0 on success, 2 on usage or configuration problems (unknown task,
malformed dataset, bad flag values), 1 on unexpected internal failure. The
SEGREWARD_SEED environment variable supplies the default seed; an explicit
--seed always wins.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
import traceback

import numpy as np

from . import data as datamod
from . import env as envmod
from . import epic as epicmod
from . import model as modelmod
from . import rl as rlmod
from . import train as trainmod
from .errors import ConfigurationError
from .rng import RngStream


def _resolve_seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    raw = os.environ.get("SEGREWARD_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigurationError(f"SEGREWARD_SEED must be an integer, got {raw!r}")


def _read_kv_file(path: str) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigurationError(f"expected key=value in {path}: {line!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def _coerce(field: dataclasses.Field, raw: str):
    t = field.type
    if t in ("bool", bool):
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigurationError(f"{field.name} expects a boolean, got {raw!r}")
    if t in ("int", int):
        return int(raw)
    if t in ("float", float):
        return float(raw)
    if field.name == "j_set":
        return tuple(int(p) for p in raw.split(",") if p.strip())
    return raw


def _config_from_kv(cls, overrides: dict):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in overrides.items():
        if key not in fields:
            raise ConfigurationError(f"unknown {cls.__name__} option {key!r}")
        try:
            kwargs[key] = _coerce(fields[key], raw)
        except ValueError:
            raise ConfigurationError(f"bad value for {key}: {raw!r}")
    return cls(**kwargs)


def cmd_demos(args) -> int:
    seed = _resolve_seed(args)
    config = envmod.make_task(args.task, seed=seed)
    rng = RngStream(seed).fork("demos")
    policy = envmod.make_expert_policy(noise=args.noise)
    trajectories = datamod.collect_demos(config, policy, args.episodes, rng)
    dataset = datamod.make_dataset(config, trajectories)
    datamod.save_dataset(dataset, args.out)
    print(f"wrote {args.episodes} episodes ({dataset.num_timesteps} timesteps) to {args.out}")
    return 0


def _load_datasets(spec: str):
    paths = [p for p in spec.split(",") if p]
    if not paths:
        raise ConfigurationError("--data requires at least one path")
    return [datamod.load_dataset(p) for p in paths]


_ABLATIONS = ("no-cont", "no-reg", "no-epic", "no-agg", "label-cond", "head-all")


def cmd_train_reward(args) -> int:
    seed = _resolve_seed(args)
    datasets = _load_datasets(args.data)

    overrides = _read_kv_file(args.config) if args.config else {}
    cfg = _config_from_kv(trainmod.TrainConfig, overrides)
    cfg = dataclasses.replace(cfg, seed=seed)
    if args.steps is not None:
        cfg = dataclasses.replace(cfg, training_steps=args.steps)
    for name in args.ablate:
        if name == "no-cont":
            cfg = dataclasses.replace(cfg, use_cont=False)
        elif name == "no-reg":
            cfg = dataclasses.replace(cfg, use_reg=False)
        elif name == "no-epic":
            cfg = dataclasses.replace(cfg, use_epic=False)
        elif name == "label-cond":
            cfg = dataclasses.replace(cfg, label_conditioned=True)

    model_cfg = None
    if "no-agg" in args.ablate or "head-all" in args.ablate:
        primary = datasets[0]
        model_cfg = modelmod.ModelConfig(
            obs_dim=primary.obs_dim,
            m=primary.m,
            use_aggregator="no-agg" not in args.ablate,
            head_all_outputs="head-all" in args.ablate,
        )

    if args.refine > 0:
        if args.task is None:
            raise ConfigurationError("--refine requires --task for rollout collection")
        if len(datasets) > 1:
            raise ConfigurationError("--refine supports a single starting dataset")
        env_config = envmod.make_task(args.task, seed=seed)
        cfg = dataclasses.replace(cfg, refinement_iterations=args.refine)
        rl_cfg = rlmod.RLConfig(total_env_steps=args.refine_rl_steps, seed=seed)
        out_dir = os.path.dirname(os.path.abspath(args.out))
        params, _ = trainmod.iterate_refinement(
            env_config, datasets[0], cfg, rl_config=rl_cfg, out_dir=out_dir
        )
    else:
        params, _ = trainmod.train_reward_model(
            datasets, cfg, model_config=model_cfg, metrics_path=args.metrics
        )
    modelmod.save_checkpoint(params, args.out)
    print(f"saved checkpoint to {args.out}")
    return 0


def cmd_eval_epic(args) -> int:
    seed = _resolve_seed(args)
    params = modelmod.load_checkpoint(args.model)
    dataset = datamod.load_dataset(args.data)
    epic_cfg = epicmod.EpicConfig(num_canonical_samples=args.samples)
    rng = RngStream(seed).fork("eval-epic")

    control = modelmod.init_params(params.config, params.vocab, params.specs,
                                   rng.fork("random-control"))
    trained = trainmod.evaluate_epic(params, dataset, epic_cfg, rng.fork("trained"),
                                     coverage_size=args.coverage)
    random_d = trainmod.evaluate_epic(control, dataset, epic_cfg, rng.fork("control"),
                                      coverage_size=args.coverage)
    for i in range(dataset.m):
        print(f"subtask {i}: distance {trained.per_subtask[i]:.6f} "
              f"(random-init {random_d.per_subtask[i]:.6f})")
    print(f"average: {trained.mean:.6f} (random-init {random_d.mean:.6f})")
    return 0


def cmd_train_rl(args) -> int:
    seed = _resolve_seed(args)
    env_config = envmod.make_task(args.task, seed=seed)
    if args.reward == "sparse":
        source = rlmod.RewardSource.sparse()
    elif args.reward == "oracle_psi":
        source = rlmod.RewardSource.oracle_psi()
    else:
        if args.model is None:
            raise ConfigurationError("--reward learned requires --model")
        params = modelmod.load_checkpoint(args.model)
        if params.config.obs_dim != env_config.obs_dim:
            raise ConfigurationError(
                f"checkpoint expects obs_dim {params.config.obs_dim}, "
                f"task {args.task} has {env_config.obs_dim}"
            )
        source = rlmod.RewardSource.learned(params)

    overrides = _read_kv_file(args.config) if args.config else {}
    cfg = _config_from_kv(rlmod.RLConfig, overrides)
    cfg = dataclasses.replace(cfg, seed=seed)
    if args.steps is not None:
        cfg = dataclasses.replace(cfg, total_env_steps=args.steps)
    result = rlmod.train_agent(env_config, source, cfg, curve_path=args.out)
    final = result.curve[-1]
    print(f"final success rate {final[1]:.3f}, mean completed subtasks {final[2]:.3f}")
    return 0


def _read_csv_rows(path):
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise ValueError("empty file")
    header = lines[0].split(",")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != len(header):
            raise ValueError(f"row has {len(parts)} fields, header has {len(header)}")
        rows.append(parts)
    return header, rows


def cmd_report(args) -> int:
    if not os.path.isdir(args.runs):
        raise ConfigurationError(f"--runs must be a directory: {args.runs}")
    names = sorted(n for n in os.listdir(args.runs) if n.endswith(".csv"))
    curve_files = []
    metrics_files = []
    for name in names:
        path = os.path.join(args.runs, name)
        try:
            header, rows = _read_csv_rows(path)
        except ValueError as exc:
            print(f"warning: skipping {name}: {exc}", file=sys.stderr)
            continue
        if header == list(rlmod.CURVE_COLUMNS):
            curve_files.append((name, rows))
        elif header == list(trainmod.METRICS_COLUMNS):
            metrics_files.append((name, rows))
        else:
            print(f"warning: skipping {name}: unrecognized columns {header}", file=sys.stderr)

    out_lines = ["# Run report", ""]
    if curve_files:
        out_lines += ["## Policy evaluation curves", "",
                      "| file | final step | success rate | mean completed | seed |",
                      "|---|---|---|---|---|"]
        for name, rows in curve_files:
            last = rows[-1]
            out_lines.append(f"| {name} | {last[0]} | {last[1]} | {last[2]} | {last[3]} |")
        out_lines.append("")
    if metrics_files:
        out_lines += ["## Reward training metrics", "",
                      "| file | final step | loss_epic | loss_reg | loss_cont | loss_total |",
                      "|---|---|---|---|---|---|"]
        for name, rows in metrics_files:
            last = rows[-1]
            out_lines.append(
                f"| {name} | {last[0]} | {last[1]} | {last[2]} | {last[3]} | {last[4]} |"
            )
        out_lines.append("")
    if not curve_files and not metrics_files:
        out_lines += ["No recognized CSV files found.", ""]

    with open(args.out, "w") as fh:
        fh.write("\n".join(out_lines))

    if args.csv is not None:
        with open(args.csv, "w") as fh:
            fh.write("source," + ",".join(rlmod.CURVE_COLUMNS) + "\n")
            for name, rows in curve_files:
                for row in rows:
                    fh.write(name + "," + ",".join(row) + "\n")
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="segreward")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("demos", help="collect scripted expert demonstrations")
    p.add_argument("--task", required=True)
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_demos)

    p = sub.add_parser("train-reward", help="fit the subtask-conditioned reward")
    p.add_argument("--data", required=True, help="dataset path, comma-separated for several")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--metrics", default=None)
    p.add_argument("--config", default=None, help="key=value overrides, one per line")
    p.add_argument("--ablate", action="append", choices=_ABLATIONS, default=[])
    p.add_argument("--refine", type=int, default=0, help="refinement iterations")
    p.add_argument("--refine-rl-steps", type=int, default=40_000)
    p.add_argument("--task", default=None, help="environment for --refine rollouts")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train_reward)

    p = sub.add_parser("eval-epic", help="distance to the segmentation oracle")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--samples", type=int, default=8)
    p.add_argument("--coverage", type=int, default=256)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_eval_epic)

    p = sub.add_parser("train-rl", help="actor-critic training on a reward source")
    p.add_argument("--task", required=True)
    p.add_argument("--reward", required=True, choices=("sparse", "oracle_psi", "learned"))
    p.add_argument("--model", default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--config", default=None, help="key=value overrides, one per line")
    p.add_argument("--out", required=True, help="evaluation curve CSV path")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train_rl)

    p = sub.add_parser("report", help="aggregate run CSVs into markdown")
    p.add_argument("--runs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None, help="optional combined curve CSV")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())

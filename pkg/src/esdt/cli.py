"""Operator command line.

Subcommands: ``train``, ``pretrain``, ``eval``, ``rtg-sweep``, ``export``,
``worker``.  Exit codes: 0 ok, 2 config error, 3 transport error, 4 worker
failure.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import checkpoint as ckpt
from . import runtime, train
from .config import load_config
from .dt import RtgConfig
from .envs import DEFAULT_RTG_SCALE, evaluate, make_env
from .errors import ConfigError, EsdtError, SpecError, TransportError, WorkerFailure
from .es import vbn_normalize
from .policy import make_policy
from .pretrain import save_dataset
from .specs import DECISION_TRANSFORMER

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRANSPORT = 3
EXIT_WORKER = 4

DEFAULT_SWEEP_RTGS = [-1000.0, 0.0, 7000.0, 1_000_000.0]


def _overrides(args):
    out = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _load(args):
    cfg = load_config(args.config, _overrides(args))
    if getattr(args, "population_scale", None):
        pop = int(round(cfg.size_of_population * args.population_scale))
        cfg.size_of_population = pop + (pop % 2)
        if cfg.batch_size > cfg.size_of_population:
            cfg.batch_size = cfg.size_of_population
    if getattr(args, "no_vbn", False):
        cfg.update_vbn_stats_probability = 0.0
    from .config import validate

    validate(cfg)
    return cfg


def cmd_train(args):
    cfg = _load(args)
    result = train.run_training(cfg, train.MODE_RL, stop_at_eval=args.stop_at_eval)
    final = result.final_eval
    print(f"trained {len(result.records)} iterations; "
          f"final eval {final if final is not None else 'n/a'}; "
          f"checkpoints in {cfg.checkpoint_dir}")
    return EXIT_OK


def cmd_pretrain(args):
    cfg = _load(args)
    dataset = train.build_dataset(cfg)
    os.makedirs(cfg.checkpoint_dir, exist_ok=True)
    save_dataset(os.path.join(cfg.checkpoint_dir, "teacher_dataset.bin"), dataset)
    result = train.run_training(cfg, train.MODE_PRETRAIN, stop_at_eval=args.stop_at_eval)
    print(f"pretrained {len(result.records)} iterations; "
          f"imitation fitness {result.final_eval}; checkpoints in {cfg.checkpoint_dir}")
    return EXIT_OK


def cmd_worker(args):
    cfg = load_config(args.config, _overrides(args))
    mode = train.MODE_PRETRAIN if args.pretrain else train.MODE_RL
    train.run_worker(cfg, args.worker_id, mode)
    return EXIT_OK


def _checkpoint_policy(path, rtg, env_name):
    spec, state, _ = ckpt.load(path)
    scale = DEFAULT_RTG_SCALE[env_name]
    rtg_cfg = RtgConfig(initial_target=rtg, scale=scale)
    policy = make_policy(state.theta, spec, rtg_cfg)
    return spec, state, policy, rtg_cfg


def cmd_eval(args):
    spec, state, policy, rtg_cfg = _checkpoint_policy(args.checkpoint, args.rtg, args.env)
    env = make_env(args.env)
    seeds = [runtime.eval_seed(args.seed_base, k) for k in range(args.episodes)]
    returns = []
    from .envs import rollout

    for s in seeds:
        returns.append(
            rollout(policy, env, s, rtg_cfg, lambda o: vbn_normalize(state.vbn, o)).ret
        )
    print(f"mean_return {np.mean(returns):.4f}")
    print(f"median_return {np.median(returns):.4f}")
    return EXIT_OK


def cmd_rtg_sweep(args):
    spec, state, _ = ckpt.load(args.checkpoint)
    if spec.kind != DECISION_TRANSFORMER:
        raise ConfigError("rtg-sweep needs a decision-transformer checkpoint")
    env = make_env(args.env)
    seeds = [runtime.eval_seed(args.seed_base, k) for k in range(args.episodes)]
    rtgs = args.rtg_values if args.rtg_values else DEFAULT_SWEEP_RTGS
    rows = []
    from .envs import rollout

    for rtg in rtgs:
        rtg_cfg = RtgConfig(initial_target=rtg, scale=DEFAULT_RTG_SCALE[args.env])
        policy = make_policy(state.theta, spec, rtg_cfg)
        returns = [
            rollout(policy, env, s, rtg_cfg, lambda o: vbn_normalize(state.vbn, o)).ret
            for s in seeds
        ]
        q1, med, q3 = np.percentile(returns, [25, 50, 75])
        rows.append({"rtg": rtg, "q1": q1, "median": med, "q3": q3})
    print(f"{'rtg':>12} {'Q1':>12} {'median':>12} {'Q3':>12}")
    for r in rows:
        print(f"{r['rtg']:>12g} {r['q1']:>12.4f} {r['median']:>12.4f} {r['q3']:>12.4f}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(rows, fh, indent=2)
    return EXIT_OK


def cmd_export(args):
    try:
        with open(args.log) as fh:
            lines = [json.loads(line) for line in fh if line.strip()]
    except OSError as exc:
        raise ConfigError(f"cannot read log {args.log}: {exc}") from exc
    rows = [l for l in lines if "iteration" in l]
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(["iteration", "best_so_far", "eval_return", "wall_clock_s"])
        for row in rows:
            writer.writerow(
                [row["iteration"], row["best_so_far"], row["eval_return"], row["wall_clock_s"]]
            )
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="esdt")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_flags(p, ablations=False):
        p.add_argument("--config", required=True)
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key")
        if ablations:
            p.add_argument("--population-scale", type=float, default=None)
            p.add_argument("--no-vbn", action="store_true")
            p.add_argument("--stop-at-eval", type=float, default=None,
                           help="stop once held-out eval reaches this return")

    p = sub.add_parser("train", help="run ES training")
    add_config_flags(p, ablations=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("pretrain", help="behavior-clone toward the scripted teacher")
    add_config_flags(p, ablations=True)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("worker", help="join a TCP master")
    add_config_flags(p)
    p.add_argument("--worker-id", type=int, required=True)
    p.add_argument("--pretrain", action="store_true")
    p.set_defaults(fn=cmd_worker)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--env", default="point_target")
    p.add_argument("--episodes", type=int, default=16)
    p.add_argument("--rtg", type=float, default=7000.0)
    p.add_argument("--seed-base", type=int, default=1)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("rtg-sweep", help="return-to-go sensitivity table")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--env", default="point_target")
    p.add_argument("--episodes", type=int, default=16)
    p.add_argument("--seed-base", type=int, default=1)
    p.add_argument("--rtg-values", type=float, nargs="*", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_rtg_sweep)

    p = sub.add_parser("export", help="log JSONL -> CSV of best-so-far per iteration")
    p.add_argument("--log", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_export)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, SpecError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except WorkerFailure as exc:
        print(f"worker failure: {exc}", file=sys.stderr)
        return EXIT_WORKER
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except EsdtError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

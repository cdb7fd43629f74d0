"""Command-line entry point.

    ftarga <subcommand> [--config PATH | --experiment ID]
                        [--seed N] [--out DIR] [--paper-scale] [--threads N]

Subcommands: train, validate, oracle, grid, run-all, loss-probe. Seed
precedence: --seed, then the config file, then the FTARGA_SEED environment
variable, then 0.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .rga import residual_loss_estimate
from .runner import (
    EXPERIMENTS,
    build_problem,
    config_from_dict,
    default_config,
    run_all,
    run_grid,
    run_oracle,
    run_train,
    run_validate,
)


def _add_common(p: argparse.ArgumentParser, need_experiment: bool = True) -> None:
    if need_experiment:
        p.add_argument("--config", help="JSON config file (partial fields allowed)")
        p.add_argument("--experiment", choices=EXPERIMENTS,
                       help="use shipped defaults for this experiment")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--paper-scale", action="store_true",
                   help="full-size runs instead of desk-scale defaults")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads for the Monte Carlo oracle")


def _env_seed() -> int | None:
    raw = os.environ.get("FTARGA_SEED")
    return int(raw) if raw else None


def _load_config(args):
    if args.config:
        with open(args.config) as fh:
            data = json.load(fh)
        if args.paper_scale:
            data["paper_scale"] = True
        if args.seed is not None:
            data["seed"] = args.seed
        elif "seed" not in data and _env_seed() is not None:
            data["seed"] = _env_seed()
        cfg = config_from_dict(data)
    elif args.experiment:
        seed = args.seed if args.seed is not None else _env_seed()
        cfg = default_config(args.experiment, seed=seed,
                             paper_scale=args.paper_scale)
    else:
        raise SystemExit("need --config or --experiment")
    if args.out is not None:
        cfg.out_dir = args.out
    cfg.threads = args.threads
    return cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ftarga", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    for name, desc in (("train", "train and write checkpoint/loss log"),
                       ("validate", "compare a checkpoint against the oracle"),
                       ("oracle", "write the oracle grid only"),
                       ("grid", "evaluate a checkpoint on the grid only")):
        p = sub.add_parser(name, help=desc)
        _add_common(p)
        if name in ("validate", "grid"):
            p.add_argument("--checkpoint", default=None,
                           help="parameter file (default: <out>/checkpoint)")

    p = sub.add_parser("run-all", help="train+validate every experiment")
    _add_common(p, need_experiment=False)

    p = sub.add_parser("loss-probe", help="loss estimate at a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--samples", type=int, default=None)

    args = parser.parse_args(argv)

    if args.command == "run-all":
        seed = args.seed if args.seed is not None else (_env_seed() or 0)
        out = args.out or "runs"
        report = run_all(seed, out, args.paper_scale, args.threads)
        for name, summary in report["experiments"].items():
            print(f"{name}: passed={summary['passed']} rmse={summary['rmse']:.4g}")
        print(f"all_passed={report['all_passed']}")
        return 0 if report["all_passed"] else 1

    cfg = _load_config(args)

    if args.command == "train":
        result = run_train(cfg)
        final = result.loss_log[-1]
        print(f"trained {cfg.experiment}: {cfg.train.iterations} iterations, "
              f"final loss {final[1]:.4g} (stderr {final[2]:.2g})")
        print(f"artifacts in {cfg.out_dir}/")
        return 0
    if args.command == "validate":
        summary = run_validate(cfg, args.checkpoint)
        print(json.dumps(summary, indent=2, sort_keys=True))
        return 0 if summary["passed"] else 1
    if args.command == "oracle":
        run_oracle(cfg)
        print(f"wrote {cfg.out_dir}/grid_oracle.csv")
        return 0
    if args.command == "grid":
        run_grid(cfg, args.checkpoint)
        print(f"wrote {cfg.out_dir}/grid_learned.csv")
        return 0
    if args.command == "loss-probe":
        problem, _ = build_problem(cfg)
        path = args.checkpoint or os.path.join(cfg.out_dir, "checkpoint")
        from .neural import load_params
        params = load_params(path)
        n = args.samples or cfg.train.probe_samples
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
        mean, err = residual_loss_estimate(params, problem, n, rng)
        print(f"loss_mean={mean:.10g} loss_stderr={err:.10g} n={n}")
        return 0
    raise SystemExit(f"unknown command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())

"""Command line front end.

Exit codes: 0 on success, 2 for configuration problems (bad config file,
missing artifacts, incompatible checkpoints), 3 for numerical failures
during training or sampling.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .checkpoint import CheckpointError
from .config import ConfigError, load_config
from . import experiments as exp

__all__ = ["main"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clfm",
        description="Constrained latent flow matching experiment pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="INI experiment config")
        p.add_argument("--out", default=None,
                       help="working directory (default: config output_dir "
                            "or runs/<experiment>)")
        return p

    add_config_command("generate-data", "draw and store the training dataset")
    add_config_command("train-vae", "train the constrained VAE stage")
    add_config_command("train-flow", "train the latent flow stage")
    add_config_command("evaluate", "sample the trained model and score it")
    add_config_command("run", "full pipeline: data, VAE, flow, evaluation")

    p = sub.add_parser("sample", help="draw fields from a saved checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--n", type=int, required=True, help="number of samples")
    p.add_argument("--grid", type=int, default=100,
                   help="evaluation grid size (ignored for wind)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output CSV path")

    p = add_config_command("sweep", "re-run the experiment over a parameter "
                                    "range and tabulate metrics")
    p.add_argument("--param", required=True,
                   help="dotted override, e.g. vae_train.lam_r")
    p.add_argument("--values", required=True,
                   help="comma-separated override values")
    return parser


def _workdir(cfg, out_flag):
    if out_flag:
        return out_flag
    if cfg.output_dir:
        return cfg.output_dir
    return os.path.join("runs", cfg.experiment)


def _dispatch(args) -> int:
    if args.command == "sample":
        out = args.out or "samples.csv"
        exp.sample_from_checkpoint(args.checkpoint, args.n, args.grid,
                                   args.seed, out_path=out)
        print(f"wrote {out}")
        return 0

    cfg = load_config(args.config)
    workdir = _workdir(cfg, args.out)

    if args.command == "generate-data":
        exp.stage_generate(cfg, workdir)
        print(f"dataset ready in {workdir}")
    elif args.command == "train-vae":
        exp.stage_vae(cfg, workdir)
        print(f"model checkpoint ready in {workdir}")
    elif args.command == "train-flow":
        exp.stage_flow(cfg, workdir)
        print(f"combined checkpoint ready in {workdir}")
    elif args.command == "evaluate":
        report = exp.stage_eval(cfg, workdir)
        print(report.to_json())
    elif args.command == "run":
        report = exp.run_experiment(cfg, workdir)
        print(report.to_json())
    elif args.command == "sweep":
        values = [v for v in args.values.split(",") if v]
        if not values:
            raise ConfigError("--values must list at least one value")
        results = exp.run_sweep(cfg, args.param, values, workdir)
        for raw, rep in results:
            print(f"{args.param}={raw}: mean_mse={rep.mean_mse:.6g} "
                  f"covariance_mse={rep.covariance_mse:.6g}")
    return 0


def _is_numerical(e: BaseException) -> bool:
    return isinstance(e, (FloatingPointError, ZeroDivisionError,
                          np.linalg.LinAlgError))


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except exp.StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3 if _is_numerical(e.cause) else 2
    except (ConfigError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (FloatingPointError, ZeroDivisionError, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``python -m hawkes_mitigation <command> ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import harness
from .harness import ConfigError, ExperimentConfig

COMMANDS = {
    "gen-network": harness.cmd_gen_network,
    "validate-moments": harness.cmd_validate_moments,
    "train": harness.cmd_train,
    "benchmark": harness.cmd_benchmark,
    "convergence": harness.cmd_convergence,
    "predict-rank": harness.cmd_predict_rank,
    "simulate": harness.cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hawkes-mitigation",
                                     description="Fake-news mitigation experiments on synthetic networks.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", type=Path, help="JSON document with ExperimentConfig fields")
    parser.add_argument("--seed", type=int, help="master seed (unsigned 64-bit); overrides the config")
    parser.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    parser.add_argument("--methods", help="comma-separated subset of ltd,cec,opl,cls,exp,rnd")
    parser.add_argument("--objective", choices=["corr", "diff"])
    parser.add_argument("--sweep", choices=harness.SWEEP_AXES, help="benchmark sweep axis")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.from_json(args.config.read_text()) if args.config else ExperimentConfig()
    kw = {}
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        kw["seed"] = args.seed
    if args.methods:
        kw["methods"] = args.methods
    if args.objective:
        kw["objective"] = args.objective
    return config.replace(**kw) if kw else config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    fn = COMMANDS[args.command]
    if args.command == "benchmark":
        return fn(config, config.seed, args.out, args.sweep)
    if args.sweep:
        print("--sweep only applies to benchmark", file=sys.stderr)
        return 2
    return fn(config, config.seed, args.out)


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point: ``oodlab run|eval|gen-fixtures``."""

from __future__ import annotations

import argparse
import logging
import sys

from .data import IDXFormatError, write_fixtures
from .harness import (
    AggregateReport,
    ConfigError,
    evaluate_config,
    load_config,
    output_dir,
    run_experiment,
    split_for_seed,
)
from .model import WeightsFormatError, load_weights

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _cmd_run(args) -> int:
    config = load_config(args.config)
    report = run_experiment(config)
    out = output_dir(config)
    print(report.to_csv(), end="")
    print(f"wrote {out / 'results.csv'}", file=sys.stderr)
    if report.partial:
        print(f"diverged split seeds: {report.diverged_seeds}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _cmd_eval(args) -> int:
    config = load_config(args.config)
    params = load_weights(args.weights)
    seed = args.seed if args.seed is not None else config.split_seeds[0]
    split = split_for_seed(config, seed)
    if params.arch.input_dim != split.train_known.inputs.shape[1] or params.arch.num_classes != split.train_known.class_count:
        raise ConfigError("weights do not match the dataset/split described by the config")
    result = evaluate_config(params, config, split)
    report = AggregateReport(config.replace(split_seeds=(seed,)), [result], [], [])
    text = report.to_csv()
    out = output_dir(config)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.csv").write_text(text)
    print(text, end="")
    return EXIT_OK


def _cmd_gen_fixtures(args) -> int:
    for key, path in write_fixtures(args.dir).items():
        print(f"{key}: {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oodlab", description="Desk-scale OOD detection experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train and evaluate every split seed in a config")
    p.add_argument("config")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("eval", help="evaluate saved weights on the config's split")
    p.add_argument("weights")
    p.add_argument("config")
    p.add_argument("--seed", type=int, default=None, help="split seed (default: first in config)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gen-fixtures", help="write the hand-built IDX fixtures")
    p.add_argument("dir")
    p.set_defaults(func=_cmd_gen_fixtures)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, IDXFormatError, WeightsFormatError, FileNotFoundError) as exc:
        print(f"oodlab: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

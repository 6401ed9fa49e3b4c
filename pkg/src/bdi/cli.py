"""Command-line entry point for running the benchmark experiments."""

import argparse
import dataclasses
import os
import sys

from .config import ConfigError, ExperimentConfig, load_config
from .harness import (
    CSV_COLUMNS,
    aggregate_rows,
    run_experiment,
    sensitivity_sweep,
    write_aggregates,
    write_rows,
)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bdi",
        description="Run the 2-D wall-avoidance imitation benchmark.")
    parser.add_argument("--config", metavar="PATH",
                        help="YAML experiment configuration")
    parser.add_argument("--method", action="append", metavar="NAME",
                        help="restrict to a method (repeatable)")
    parser.add_argument("--world", action="append", metavar="NAME",
                        help="restrict to a world (repeatable)")
    parser.add_argument("--seed", type=int, metavar="N",
                        help="master seed override")
    parser.add_argument("--out", metavar="DIR",
                        help="output directory override")
    parser.add_argument("--sweep", action="store_true",
                        help="run the hyperparameter sensitivity sweep "
                             "instead of the method grid")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config) if args.config else ExperimentConfig()
        if args.method:
            config = dataclasses.replace(config, methods=list(args.method))
        if args.world:
            config = dataclasses.replace(config, worlds=list(args.world))
        if args.seed is not None:
            config = dataclasses.replace(config, master_seed=args.seed)
        if args.out:
            config = dataclasses.replace(config, out=args.out)
        config.validate()
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if args.sweep:
        if not config.sweep:
            print("error: --sweep requires a 'sweep' section in the config",
                  file=sys.stderr)
            return 2
        rows = sensitivity_sweep(config, progress=print)
        columns = ["parameter", "value"] + CSV_COLUMNS
        out_csv = os.path.join(config.out, "sweep.csv")
        write_rows(out_csv, rows, columns=columns)
        print(f"wrote {out_csv} ({len(rows)} rows)")
        return 0

    rows = run_experiment(config, progress=print)
    out_csv = os.path.join(config.out, "results.csv")
    write_rows(out_csv, rows)
    aggregates = aggregate_rows(rows)
    out_json = os.path.join(config.out, "aggregates.json")
    write_aggregates(out_json, aggregates)
    print(f"wrote {out_csv} ({len(rows)} rows) and {out_json}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

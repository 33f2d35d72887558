"""Command-line pipeline driver.

Subcommands run one stage each against a JSON config file; all randomness
flows from the config's root seed, so reruns are byte-identical. Exit
codes: 0 success, 2 config error, 3 data error, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import ConfigError, DataError, PipelineConfig
from .neural import DivergenceError
from .pipeline import (
    run_extract,
    run_moran,
    run_rate,
    run_report,
    run_risk_combine,
    run_scenario,
    run_train,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4

STAGES = {
    "extract": (run_extract, "compute the cell-by-feature matrix"),
    "train": (run_train, "encode, cluster, and rate cells"),
    "rate": (run_rate, "re-rate from persisted cluster labels"),
    "moran": (run_moran, "global spatial autocorrelation of levels"),
    "scenario": (run_scenario, "what-if re-rating under feature changes"),
    "risk-combine": (run_risk_combine, "combined resilience-risk categories"),
    "report": (run_report, "bundle reports and cell GeoJSON"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="resilgrid",
        description="Rate disaster resilience of metro grid cells from "
                    "socio-technical features.")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in STAGES.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to JSON config")
        p.add_argument("--out", help="override output directory")
        p.add_argument("--seed", type=int, help="override root seed")
        if name == "train":
            p.add_argument("--grid-search", action="store_true",
                           help="search embedding dim and cluster count")
    return parser


def load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.from_file(args.config)
    if args.out is not None:
        # cwd-relative, unlike layer paths which stay config-relative
        cfg.raw["output_dir"] = os.path.abspath(args.out)
    if args.seed is not None:
        cfg.raw["seed"] = args.seed
    if getattr(args, "grid_search", False):
        cfg.raw["grid_search"]["enabled"] = True
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr)
    try:
        cfg = load_config(args)
        STAGES[args.command][0](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

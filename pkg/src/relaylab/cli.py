"""Command-line entry point.

    relaylab <command> --config experiment.cfg [--seed N] [--workers N]
             [--deterministic]

Exit code 0 on success; on failure a single machine-parsable line
`relaylab-error: <Kind>: <message>` goes to stderr and the exit code is
nonzero.
"""

import argparse
import sys

from . import experiments
from .config import SCHEMAS, parse_config
from .errors import RelayLabError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relaylab",
        description="Analogue-relay forecasting lab for forced 2D turbulence")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SCHEMAS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True,
                         help="experiment config file (INI-style sections)")
        cmd.add_argument("--seed", type=int, default=0,
                         help="base seed override recorded in the config echo")
        cmd.add_argument("--workers", type=int, default=1,
                         help="worker processes for trajectory generation")
        cmd.add_argument("--deterministic", action="store_true",
                         help="pin the deterministic-mode flag in the echo")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.command, args.config, seed=args.seed,
                           workers=args.workers,
                           deterministic=args.deterministic)
        artifact = experiments.run(args.command, cfg)
    except (RelayLabError, ValueError, OSError) as err:
        print(f"relaylab-error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1
    print(artifact)
    return 0


if __name__ == "__main__":
    sys.exit(main())

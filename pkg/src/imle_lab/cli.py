"""``imle-lab <command> --config <path> [--seed N] [--out DIR]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from threadpoolctl import threadpool_limits

from . import io
from .experiments import COMMANDS, load_config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="imle-lab", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="JSON config; keys not given keep their defaults")
    parser.add_argument("--seed", type=int, help="overrides the config seed")
    parser.add_argument("--out", help="output directory (overrides out_dir)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        threads = io.threads_from_env()
        cfg = load_config(args.command, args.config, seed=args.seed, out_dir=args.out)
    except (ValueError, OSError) as exc:
        print(f"imle-lab: {exc}", file=sys.stderr)
        return 2
    # sequential mode pins BLAS to one thread so reductions happen in a fixed order
    with threadpool_limits(limits=max(threads, 1)):
        try:
            result = COMMANDS[args.command](cfg)
        except FileNotFoundError as exc:
            print(f"imle-lab: {exc}", file=sys.stderr)
            return 1
    print(json.dumps({"out_dir": str(result.out_dir), "summary": result.summary},
                     indent=2, default=io._json_default))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

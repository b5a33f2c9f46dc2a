"""Command line entry point.

    ihgp <infer|fit|online|lgcp|bench|gen> --config cfg.json [--data file.csv] [--out dir]

On failure the process prints one line ``error: <kind>: <message>`` to
stderr and exits with status 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from ..errors import IhgpError
from . import commands
from .config import MODES, RunConfig


def _parser():
    p = argparse.ArgumentParser(prog="ihgp", description="Infinite-horizon GP inference for long time series.")
    p.add_argument("command", choices=MODES)
    p.add_argument("--config", help="run configuration (JSON); optional for bench and gen")
    p.add_argument("--data", help="input CSV")
    p.add_argument("--out", default=".", help="output directory (default: current directory)")
    p.add_argument("--method", choices=("ihgp", "exact"), help="override the configured inference method")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run(argv=None) -> dict:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.config is None:
        if args.command not in ("bench", "gen"):
            raise IhgpError(f"'{args.command}' needs --config")
        cfg = RunConfig()
    else:
        cfg = RunConfig.load(args.config)
    cmd = args.command
    if cmd == "infer":
        return commands.cmd_infer(cfg, args.data, args.out, method=args.method)
    if cmd == "fit":
        return commands.cmd_fit(cfg, args.data, args.out)
    if cmd == "online":
        return commands.cmd_online(cfg, args.data, args.out)
    if cmd == "lgcp":
        return commands.cmd_lgcp(cfg, args.data, args.out, method=args.method)
    if cmd == "bench":
        progress = (lambda row: print(json.dumps(row), file=sys.stderr)) if args.verbose else None
        return commands.cmd_bench(cfg, args.out, progress=progress)
    return commands.cmd_gen(cfg, args.out)


def _one_line(text) -> str:
    return " ".join(str(text).split())


def main(argv=None) -> int:
    try:
        summary = run(argv)
    except IhgpError as exc:
        print(f"error: {exc.kind}: {_one_line(exc)}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {_one_line(exc)}", file=sys.stderr)
        return 1
    except (ValueError, ArithmeticError, KeyError, TypeError) as exc:
        print(f"error: internal: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return 1
    print(json.dumps({k: v for k, v in summary.items() if k != "trace"}, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())

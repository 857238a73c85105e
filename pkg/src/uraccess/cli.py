"""Command line entry point: one subcommand per experiment kind, plus ``reproduce``.

Exit status: 0 on success, 2 for an invalid config, 3 when a bound is infeasible.
"""
from __future__ import annotations

import argparse
import json
import sys

import yaml

from .harness.config import KINDS, ConfigError, load_config
from .harness.figures import FIGURES, LONG_RUNNING, reproduce_figure
from .harness.runner import run

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 2, 3


def _common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--trials", type=int, help="Monte-Carlo trials per point")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int, help="worker processes")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="uraccess", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run an experiment of kind {kind}")
        p.add_argument("--config", required=True, help="YAML experiment file")
        _common(p)
    p = sub.add_parser("reproduce", help="regenerate the data of one figure")
    p.add_argument("figure", choices=FIGURES)
    p.add_argument("--scale", choices=("desk", "full"), default="desk")
    p.add_argument("--code", help="LDPC code name or alist path for decoder figures")
    _common(p)
    return ap


def _error(e: ConfigError) -> int:
    print(json.dumps({"error": "invalid config", "key": e.key, "message": str(e)}), file=sys.stderr)
    return EXIT_CONFIG


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: getattr(args, k) for k in ("seed", "trials", "out", "workers")
                 if getattr(args, k) is not None}
    try:
        if args.command == "reproduce":
            if args.scale in LONG_RUNNING:
                print(f"note: {args.figure} at full scale is long-running", file=sys.stderr)
            recs = reproduce_figure(args.figure, args.scale, overrides.get("out", "figures"),
                                    overrides.get("workers", 1), overrides.get("seed", 0),
                                    args.code, overrides.get("trials"))
        else:
            try:
                cfg = load_config(args.config)
            except OSError as e:
                raise ConfigError("--config", str(e)) from e
            except yaml.YAMLError as e:
                raise ConfigError("--config", f"not valid YAML: {e}") from e
            if cfg.kind != args.command:
                raise ConfigError("kind", f"config is {cfg.kind!r}, subcommand is {args.command!r}")
            recs = [run(cfg.replace(**overrides) if overrides else cfg)]
    except ConfigError as e:
        return _error(e)
    for r in recs:
        for f in r.files:
            print(f)
    return EXIT_INFEASIBLE if any(r.infeasible for r in recs) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

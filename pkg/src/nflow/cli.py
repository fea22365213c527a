"""Command-line experiment runner.

Subcommands mirror the experiment names; a config file drives everything
and flags override its top-level fields.
"""

import argparse
import json
import sys

from .experiments import EXPERIMENTS, load_config, run_experiment


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nflow",
        description="n-harmonic map flow laboratory: blowup runs, bubble "
                    "and neck diagnostics, covering-space width experiments.")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} recipe")
        p.add_argument("--config", default=None,
                       help="JSON config file (overridden by flags below)")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=0, help="seed for randomized checks")
        p.add_argument("--jobs", type=int, default=1, help="worker pool size for sweeps")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. flow.n=4 (JSON values)")
    return parser


def _apply_override(config: dict, item: str) -> None:
    key, _, raw = item.partition("=")
    if not _:
        raise SystemExit(f"--set needs KEY=VALUE, got {item!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = config
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    config = load_config(args.config) if args.config else {}
    config["experiment"] = args.experiment
    for item in args.set:
        _apply_override(config, item)
    return run_experiment(config, args.out, seed=args.seed, jobs=args.jobs)


if __name__ == "__main__":
    sys.exit(main())

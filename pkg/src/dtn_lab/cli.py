"""Command-line entry point: dtn-lab <kind> --config <path> [--out DIR] [--seed N] [--threads K]."""
from __future__ import annotations

import argparse
import json
import sys

from .experiments import KINDS, ExperimentConfig, run


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with 1; exit code 2 is reserved for invariant failures."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dtn-lab", description="Run a lattice DtN experiment.")
    p.add_argument("kind", choices=KINDS)
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--seed", type=int, help="base seed (overrides the config)")
    p.add_argument("--threads", type=int, help="worker threads for mode probing")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
        raw["kind"] = args.kind
        if args.seed is not None:
            raw["seed"] = args.seed
        if args.threads is not None:
            raw["threads"] = args.threads
        cfg = ExperimentConfig.from_dict(raw)
    except (OSError, ValueError, TypeError, KeyError) as exc:
        print(f"dtn-lab: invalid config: {exc}", file=sys.stderr)
        return 1
    result = run(cfg, args.out)
    s = result.summary
    for name, suite in sorted(s["suites"].items()):
        print(f"{name}: {'pass' if suite['passed'] else 'FAIL'}")
    if s["error"]:
        print(f"error: {s['error']['type']}: {s['error']['message']}", file=sys.stderr)
    print(f"status: {s['status']}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())

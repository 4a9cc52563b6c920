"""Command line entry point: ``multisymplectic <task> --config <path> [--seed k] [--out dir]``."""

from __future__ import annotations

import argparse
import sys

from .scenario import EXIT_CONFIG, TASKS, ConfigError, load_config, run_scenario


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="multisymplectic",
        description="Checks and integrators for covariant (De Donder-Weyl) Hamiltonian field theory.",
    )
    ap.add_argument("task", choices=TASKS)
    ap.add_argument("--config", required=True, help="scenario JSON file")
    ap.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    ap.add_argument("--out", default=None, help="output directory (overrides config 'output')")
    ap.add_argument("--quiet", action="store_true", help="only report errors")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, task=args.task, seed=args.seed, output=args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    result = run_scenario(cfg)
    err = result.summary.get("error")
    if err:
        print(f"error in {err['module']}: {err['type']}: {err['message']}", file=sys.stderr)
    if not args.quiet:
        for name, chk in result.summary.get("checks", {}).items():
            mark = "PASS" if chk["passed"] else "FAIL"
            print(f"{mark} {name}: {chk['value']:.3e}")
        print(f"{cfg.task}: exit {result.status}; artifacts in {cfg.output}")
    return result.status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

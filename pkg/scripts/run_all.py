#!/usr/bin/env python3
"""Run every experiment command with one config and print the overall verdicts."""
import argparse
import sys

from wkbstab.experiments import COMMANDS, load_config, run_command


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=None, help="YAML config (defaults if omitted)")
    ap.add_argument("--out", default="results")
    ap.add_argument("--quick", action="store_true", help="cheap smoke-test settings")
    args = ap.parse_args()
    cfg = load_config(args.config, out_dir=args.out)
    if args.quick:
        cfg = cfg.quick_version()
    failed = []
    for name in COMMANDS:
        rep = run_command(name, cfg)
        print(f"{name:20s} {'PASS' if rep.passed else 'FAIL'}")
        if not rep.passed:
            failed.append(name)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""Stability sweep: E(eps) and the Schrodinger-comparison error versus eps."""
import argparse
import sys

from wkbstab.experiments import load_config, run_command


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/default.yaml")
    ap.add_argument("--out", default="results")
    ap.add_argument("--jobs", type=int, default=None)
    ap.add_argument("--eps", type=float, nargs="+", default=None)
    args = ap.parse_args()
    cfg = load_config(args.config, out_dir=args.out, jobs=args.jobs, eps_list=args.eps)
    rep = run_command("stability-sweep", cfg)
    print(rep.summary())
    return 0 if rep.passed else 1


if __name__ == "__main__":
    sys.exit(main())

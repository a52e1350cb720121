"""Rerun the fig2 experiment and print its checks.

Usage: python3 scripts/run_fig2.py [OUT_DIR] [--seed N] [--config PATH]
"""
import sys

from caaf.cli import main

if __name__ == "__main__":
    args = sys.argv[1:]
    out = args.pop(0) if args and not args[0].startswith("-") else "results/fig2"
    raise SystemExit(main(["repro", "fig2", "--out", out, *args]))

"""Rerun the beam_fig4 experiment and print its checks.

Usage: python3 scripts/run_beam_fig4.py [OUT_DIR] [--seed N] [--config PATH]
"""
import sys

from caaf.cli import main

if __name__ == "__main__":
    args = sys.argv[1:]
    out = args.pop(0) if args and not args[0].startswith("-") else "results/beam_fig4"
    raise SystemExit(main(["repro", "beam_fig4", "--out", out, *args]))

"""Rerun the table1 experiment and print its checks.

Usage: python3 scripts/run_table1.py [OUT_DIR] [--seed N] [--config PATH]
"""
import sys

from caaf.cli import main

if __name__ == "__main__":
    args = sys.argv[1:]
    out = args.pop(0) if args and not args[0].startswith("-") else "results/table1"
    raise SystemExit(main(["repro", "table1", "--out", out, *args]))

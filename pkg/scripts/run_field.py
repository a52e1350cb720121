"""Rerun the field experiment and print its checks.

Usage: python3 scripts/run_field.py [OUT_DIR] [--seed N] [--config PATH]
"""
import sys

from caaf.cli import main

if __name__ == "__main__":
    args = sys.argv[1:]
    out = args.pop(0) if args and not args[0].startswith("-") else "results/field"
    raise SystemExit(main(["repro", "field", "--out", out, *args]))

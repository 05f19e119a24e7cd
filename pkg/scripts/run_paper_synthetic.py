#!/usr/bin/env python3
"""Run the full synthetic benchmark suite (XOR, Trig, Dot).

Writes one result directory per dataset under --out (default
results/paper-synthetic), each containing results.csv, summary.csv,
timings.csv, per-run traces and checkpoints, and, for Dot, intervention
curves. Exit status is non-zero if any run fails or any configured
assertion does not hold.

Usage:
    python scripts/run_paper_synthetic.py [--out DIR] [--jobs N]
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from cemlab import cli  # noqa: E402

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "configs", "paper-synthetic")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=os.path.join("results", "paper-synthetic"))
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--seed-offset", type=int, default=0)
    args = parser.parse_args()
    configs = [os.path.join(CONFIG_DIR, f"{name}.cfg") for name in ("xor", "trig", "dot")]
    return cli.main(
        ["run", "--config", *configs, "--out", args.out,
         "--jobs", str(args.jobs), "--seed-offset", str(args.seed_offset)]
    )


if __name__ == "__main__":
    sys.exit(main())

"""Evaluate the three-factor residual bound along a run on a small dense-spectrum problem.

    python3 scripts/bound_check.py [--out runs/bounds]
"""
import argparse
import csv
from pathlib import Path

from quasidd.config import load_config
from quasidd.scenarios import run_scenario

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "bound_small.cfg"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/bounds")
    args = ap.parse_args()
    m = run_scenario(load_config(CONFIG), args.out)
    print(f"status={m.status} N={m.N} iterations={m.iterations}")
    with open(Path(args.out) / "bounds.csv") as fh:
        for row in csv.DictReader(fh):
            print({k: row[k] for k in ("J", "l", "m", "bound", "observed")})


if __name__ == "__main__":
    main()

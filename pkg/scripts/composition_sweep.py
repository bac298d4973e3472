"""Iteration counts for DtN-only, deflation-only and combined second levels at two budgets.

    python3 scripts/composition_sweep.py [--out runs/composition] [--budgets 32 256]
"""
import argparse
from pathlib import Path

from quasidd.config import load_config
from quasidd.scenarios import run_table_sweep

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "composition.cfg"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/composition")
    ap.add_argument("--budgets", type=int, nargs="+", default=[32, 256])
    args = ap.parse_args()
    cfg = load_config(CONFIG)
    S = cfg.decomposition.S
    comps = [(0, 0)]
    for b in args.budgets:
        comps += [(b, 0), (0, b), (b - S, S)]
    rows = run_table_sweep(cfg, comps, args.out)
    print(f"{'n_cs':>6}{'n_def':>7}{'iters':>7}  status")
    for r in rows:
        print(f"{r['n_cs']:>6}{r['n_def']:>7}{r['iterations']!s:>7}  {r['status']}")


if __name__ == "__main__":
    main()

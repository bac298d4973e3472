"""Residual plateaus at the (0,3) quasiresonance for S = 8 and 16, with and without deflation.

    python3 scripts/plateau_study.py [--out runs/plateau]
"""
import argparse
from pathlib import Path

from quasidd.config import load_config
from quasidd.scenarios import run_scenario

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/plateau")
    args = ap.parse_args()
    print(f"{'run':<22}{'N':>7}{'iters':>7}  plateaus  first HR match")
    for S in (8, 16):
        for tag in ("", "_deflated"):
            name = f"plateau_s{S}{tag}"
            m = run_scenario(load_config(CONFIGS / f"{name}.cfg"), Path(args.out) / name)
            print(f"{name:<22}{m.N:>7}{m.iterations:>7}  {m.plateaus!s:<9} {m.hr_match_iteration}")


if __name__ == "__main__":
    main()

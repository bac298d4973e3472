"""Command line entry point: run, sweep, export-matrix, plot."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .scenarios import (CONFIG_ERRORS, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, NUMERICAL_ERRORS,
                        export_matrix, parse_compositions, run_scenario, run_table_sweep)

log = logging.getLogger("quasidd")


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    manifest = run_scenario(cfg, args.out)
    out = args.out or cfg.output.dir
    print(f"status={manifest.status} N={manifest.N} iterations={manifest.iterations} "
          f"plateaus={len(manifest.plateaus)} -> {out}")
    if manifest.error:
        print(manifest.error, file=sys.stderr)
    return manifest.exit_code


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    comps = parse_compositions(args.compositions)
    rows = run_table_sweep(cfg, comps, args.out)
    w = csv.DictWriter(sys.stdout, fieldnames=["n_cs", "n_def", "iterations", "status"], extrasaction="ignore")
    w.writeheader()
    w.writerows(rows)
    if any(r["status"] == "config_error" for r in rows):
        return EXIT_CONFIG
    if any(r["status"] != "ok" for r in rows):
        return EXIT_NUMERICAL
    return EXIT_OK


def _cmd_export(args) -> int:
    for p in export_matrix(load_config(args.config), args.out):
        print(p)
    return EXIT_OK


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _cmd_plot(args) -> int:
    import matplotlib
    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    run = Path(args.run_dir)
    if not run.is_dir():
        raise ConfigError(f"{run} is not a directory")
    written = []
    histories = {}
    if (run / "gmres_residuals.csv").exists():
        histories["run"] = run / "gmres_residuals.csv"
    for p in sorted((run / "rows").glob("*_residuals.csv")) if (run / "rows").is_dir() else []:
        histories[p.name.removesuffix("_residuals.csv")] = p
    if not histories:
        raise ConfigError(f"no residual histories under {run}")

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, path in histories.items():
        rows = _read_csv(path)
        ax.semilogy([int(r["iteration"]) for r in rows], [float(r["relative_residual"]) for r in rows],
                    label=label)
    plateau_file = run / "plateaus.csv"
    if plateau_file.exists():
        for r in _read_csv(plateau_file):
            ax.axvspan(int(r["start"]), int(r["end"]), color="0.9", zorder=0)
    ax.set_xlabel("iteration")
    ax.set_ylabel("relative residual")
    if len(histories) > 1:
        ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(run / "residuals.svg")
    plt.close(fig)
    written.append(run / "residuals.svg")

    spec_file, hr_file = run / "spectrum.csv", run / "gmres_hr.csv"
    if spec_file.exists():
        fig, ax = plt.subplots(figsize=(5, 5))
        if hr_file.exists():
            hr = _read_csv(hr_file)
            ax.scatter([float(r["re"]) for r in hr], [float(r["im"]) for r in hr], s=4,
                       c=[int(r["iteration"]) for r in hr], cmap="viridis", label="harmonic Ritz")
        spec = _read_csv(spec_file)
        ax.scatter([float(r["re"]) for r in spec], [float(r["im"]) for r in spec], s=18,
                   marker="x", color="crimson", label="eigenvalues")
        ax.set_xlabel("Re")
        ax.set_ylabel("Im")
        ax.legend(fontsize="small")
        fig.tight_layout()
        fig.savefig(run / "spectrum.svg")
        plt.close(fig)
        written.append(run / "spectrum.svg")
    for p in written:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="quasidd", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="iteration counts for second-level compositions")
    p.add_argument("config")
    p.add_argument("--compositions", nargs="+", required=True, metavar="N_CS,N_DEF")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("export-matrix", help="write A, b (Matrix Market) and the mesh")
    p.add_argument("config")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_export)

    p = sub.add_parser("plot", help="SVG plots of a run or sweep directory")
    p.add_argument("run_dir")
    p.set_defaults(func=_cmd_plot)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

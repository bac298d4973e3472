"""Experiment driver: config -> assembly -> decomposition -> preconditioner -> GMRES -> diagnostics."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse.linalg as spla

from . import __version__
from . import diagnostics as dg
from .config import ConfigError, ScenarioConfig, dump_config, load_config
from .fem import (AssembledSystem, GeometryError, ResolutionError, build_system,
                  dofs_per_wavelength_to_h, write_mesh, write_system)
from .krylov import GmresConfig, GmresTrace, gmres, write_trace
from .linalg import LinAlgError
from .partition import Decomposition, LocalProblem, PartitionError, build_local_problems, decompose, \
    write_decomposition_csv
from .precond import (LABEL_CS, LABEL_DEF, DeflationBasis, DeflationSetupError, PreconditionerChain,
                      build_deflation, build_dtn_coarse_space, nearest_modes, quasimode_vector,
                      second_condition_margin, write_basis)

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
CONFIG_ERRORS = (ConfigError, GeometryError, ResolutionError, PartitionError, dg.SizeError)
NUMERICAL_ERRORS = (LinAlgError, DeflationSetupError, ArithmeticError, np.linalg.LinAlgError, RuntimeError)


@dataclass
class RunManifest:
    config: str
    config_digest: str
    version: str = __version__
    status: str = "pending"
    error: str | None = None
    k: float | None = None
    h: float | None = None
    N: int | None = None
    subdomain_sizes: list[int] = field(default_factory=list)
    n_cs: int = 0
    n_def: int = 0
    quasimodes: list[list[int]] = field(default_factory=list)
    coarse_condition: float | None = None
    second_condition_margin: float | None = None
    iterations: int | None = None
    converged: bool | None = None
    final_residual: float | None = None
    true_residual: float | None = None
    plateaus: list[list[int]] = field(default_factory=list)
    spectrum_mode: str | None = None
    smallest_eigenvalues: list[list[float]] = field(default_factory=list)
    hr_match_iteration: list[int | None] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return {"ok": EXIT_OK, "config_error": EXIT_CONFIG}.get(self.status, EXIT_NUMERICAL)

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


@dataclass(eq=False)
class Setup:
    """Everything shared by runs that differ only in the second level."""
    cfg: ScenarioConfig
    system: AssembledSystem
    dec: Decomposition
    locals_: list[LocalProblem]
    h: float


@contextmanager
def _timed(timings: dict, name: str):
    t0 = time.perf_counter()
    try:
        yield
    finally:
        timings[name] = round(time.perf_counter() - t0, 6)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def mesh_size(cfg: ScenarioConfig) -> float:
    """Target h from dofs per wavelength, capped so the cavity walls get a cell."""
    g = cfg.geometry_params()
    h = dofs_per_wavelength_to_h(cfg.discretization.n_lambda, g.k, cfg.discretization.p)
    return min(h, g.t_w) if g.cavity else h


def prepare(cfg: ScenarioConfig, timings: dict | None = None) -> Setup:
    timings = {} if timings is None else timings
    g = cfg.geometry_params()
    h = mesh_size(cfg)
    with _timed(timings, "assembly"):
        system = build_system(g, h, cfg.discretization.p)
    dc = cfg.decomposition
    with _timed(timings, "decomposition"):
        dec = decompose(system.mesh, system.dofmap, dc.S, dc.layout, dc.overlap)
    with _timed(timings, "local_factorization"):
        locals_ = build_local_problems(system, dec)
    return Setup(cfg, system, dec, locals_, h)


def second_level(setup: Setup, n_cs_per_subdomain: int, modes, selection: str = "abs-real",
                 cs_cache: dict | None = None) -> DeflationBasis:
    """Deflation basis with DtN coarse vectors followed by quasimode vectors."""
    cols, labels = [], []
    if n_cs_per_subdomain:
        key = (n_cs_per_subdomain, selection)
        if cs_cache is not None and key in cs_cache:
            Z = cs_cache[key]
        else:
            Z = build_dtn_coarse_space(setup.system, setup.dec, n_cs_per_subdomain, selection)
            if cs_cache is not None:
                cs_cache[key] = Z
        cols.append(Z)
        labels += [LABEL_CS] * Z.shape[1]
    if modes:
        g, coords = setup.system.geometry, setup.system.dofmap.coords
        cols.append(np.stack([quasimode_vector(m, n, g, coords) for m, n in modes], axis=1))
        labels += [LABEL_DEF] * len(modes)
    Z = np.hstack(cols) if cols else np.zeros((setup.system.n, 0), dtype=complex)
    return build_deflation(setup.system.A, Z, labels)


def make_chain(setup: Setup, variant: str, basis: DeflationBasis | None) -> PreconditionerChain:
    if variant == "none":
        return PreconditionerChain("none")
    if variant == "oras":
        return PreconditionerChain("oras", setup.dec, setup.locals_)
    return PreconditionerChain("oras+adef", setup.dec, setup.locals_, basis)


def right_hand_side(setup: Setup) -> np.ndarray:
    """Scattering load, or a seeded random vector; a vanishing load is a config error."""
    n = setup.system.n
    if setup.cfg.solver.rhs == "random":
        rng = np.random.default_rng([setup.cfg.seed, 1])
        return rng.standard_normal(n) + 1j * rng.standard_normal(n)
    if not np.any(setup.system.b):
        raise ConfigError("the scattering load vanishes (no obstacle); use solver.rhs = random")
    return setup.system.b


def solve(setup: Setup, chain: PreconditionerChain) -> GmresTrace:
    s = setup.cfg.solver
    b = right_hand_side(setup)
    x0 = None
    if s.random_x0:
        rng = np.random.default_rng(setup.cfg.seed)
        x0 = rng.standard_normal(setup.system.n) + 1j * rng.standard_normal(setup.system.n)
    cfg = GmresConfig(tol=s.tol, maxiter=s.maxiter, record_hr=s.record_hr, hr_every=s.hr_every, x0=x0)
    return gmres(setup.system.A, b, cfg, M=chain)


def _near_spectrum(setup: Setup, variant: str, count: int, seed: int) -> np.ndarray:
    if variant == "oras":
        return dg.oras_near_spectrum(setup.system.A, setup.dec, setup.locals_, count=count, seed=seed)
    v0 = np.random.default_rng(seed).standard_normal(setup.system.n) + 0j
    vals = spla.eigs(setup.system.A.tocsc(), k=count, sigma=0, v0=v0, return_eigenvectors=False)
    return vals[np.argsort(np.abs(vals), kind="stable")]


def _write_near_spectrum(path: Path, vals: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["re", "im", "kappa"])
        for lam in vals:
            w.writerow([f"{lam.real:.17g}", f"{lam.imag:.17g}", "nan"])


def run_diagnostics(setup: Setup, chain: PreconditionerChain, trace: GmresTrace, out: Path,
                    manifest: RunManifest) -> None:
    cfg = setup.cfg
    d = cfg.diagnostics
    plateaus = dg.detect_plateaus(trace.residual_norms, d.plateau_window, d.plateau_rate)
    manifest.plateaus = [list(p) for p in plateaus]
    dg.write_plateaus_csv(out / "plateaus.csv", plateaus)

    mode = d.spectrum
    n = setup.system.n
    if mode == "auto":
        if n <= d.dense_cap:
            mode = "dense"
        elif chain.variant in ("none", "oras"):
            mode = "near"
        else:
            mode = "off"
            manifest.notes.append("spectrum skipped: N above the dense cap and no sparse path for oras+adef")
    manifest.spectrum_mode = mode
    report, eigs = None, None
    if mode == "dense":
        A = setup.system.A
        report = dg.preconditioned_spectrum(lambda X: A @ chain(X), n=n, label=chain.variant, cap=d.dense_cap)
        dg.write_spectrum_csv(out / "spectrum.csv", report)
        eigs = report.eigenvalues
    elif mode == "near":
        eigs = _near_spectrum(setup, chain.variant, d.spectrum_count, cfg.seed)
        _write_near_spectrum(out / "spectrum.csv", eigs)
    if eigs is None:
        return
    targets = eigs[np.argsort(np.abs(eigs), kind="stable")[:d.trajectory_targets]]
    manifest.smallest_eigenvalues = [[float(z.real), float(z.imag)] for z in targets]
    if trace.hr_values and len(targets):
        dist = dg.match_hr_trajectories(trace, targets)
        dg.write_trajectories_csv(out / "trajectories.csv", dist, targets)
        first = []
        for i, z in enumerate(targets):
            hit = [l for l in sorted(dist) if dist[l][i] < d.match_threshold * abs(z)]
            first.append(hit[0] if hit else None)
        manifest.hr_match_iteration = first
    if d.bounds:
        if report is None:
            manifest.notes.append("bounds skipped: they need the dense spectrum")
            return
        reports = []
        for J, l, m in d.bounds:
            try:
                reports.append(dg.evaluate_theorem_bound(trace, report, J, l, m, d.bound_selection))
            except (ValueError, dg.BoundUnavailable, dg.PoleError) as exc:
                manifest.notes.append(f"bound (J={J}, l={l}, m={m}) skipped: {exc}")
        dg.write_bounds_csv(out / "bounds.csv", reports)


def _finish(manifest: RunManifest, out: Path) -> RunManifest:
    manifest.outputs = {p.name: _sha256(p) for p in sorted(out.iterdir())
                        if p.is_file() and p.name != "manifest.json"}
    manifest.write(out / "manifest.json")
    return manifest


def run_scenario(cfg: ScenarioConfig | str | Path, out_dir=None) -> RunManifest:
    """Run one scenario; the manifest is written even when a stage fails."""
    if not isinstance(cfg, ScenarioConfig):
        cfg = load_config(cfg)
    if out_dir is not None:
        cfg = cfg.with_output(out_dir)
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(config=dump_config(cfg), config_digest=cfg.digest(), k=cfg.k)
    (out / "config.cfg").write_text(manifest.config)
    timings = manifest.timings
    try:
        setup = prepare(cfg, timings)
        manifest.h, manifest.N = setup.h, setup.system.n
        manifest.subdomain_sizes = setup.dec.sizes
        d = cfg.diagnostics
        if d.write_decomposition:
            write_decomposition_csv(out / "decomposition.csv", setup.dec, setup.system.dofmap.coords)
        if d.write_matrices:
            write_system(out / "system", setup.system)

        pc = cfg.preconditioner
        basis = None
        if pc.variant == "oras+adef":
            modes = cfg.deflation_modes()
            with _timed(timings, "second_level"):
                basis = second_level(setup, pc.n_cs, modes, pc.dtn_selection)
            manifest.n_cs, manifest.n_def = basis.n_cs, basis.n_def
            manifest.quasimodes = [list(m) for m in modes]
            manifest.coarse_condition = basis.E_cond
            if basis.size and basis.size <= 512:
                manifest.second_condition_margin = second_condition_margin(
                    basis, lambda V: make_chain(setup, "oras", None)(V))
            if d.write_matrices:
                write_basis(out / "basis", basis)
        chain = make_chain(setup, pc.variant, basis)

        with _timed(timings, "gmres"):
            trace = solve(setup, chain)
        write_trace(out / "gmres", trace)
        manifest.iterations = trace.iterations
        manifest.converged = trace.converged
        manifest.final_residual = float(trace.residual_norms[-1])
        manifest.true_residual = trace.true_residual

        with _timed(timings, "diagnostics"):
            run_diagnostics(setup, chain, trace, out, manifest)
        if trace.converged:
            manifest.status = "ok"
        else:
            manifest.status = "not_converged"
            manifest.error = f"no convergence to tol={cfg.solver.tol} in {cfg.solver.maxiter} iterations"
    except CONFIG_ERRORS as exc:
        manifest.status, manifest.error = "config_error", f"{type(exc).__name__}: {exc}"
    except NUMERICAL_ERRORS as exc:
        manifest.status, manifest.error = "numerical_failure", f"{type(exc).__name__}: {exc}"
    return _finish(manifest, out)


# -- second-level sweeps ------------------------------------------------------

SWEEP_COLUMNS = ["n_cs", "n_def", "n_cs_per_subdomain", "iterations", "converged",
                 "final_residual", "status", "error"]


def parse_compositions(items) -> list[tuple[int, int]]:
    """Accept "32,0" style strings (or pairs) and return integer pairs."""
    out = []
    for item in items:
        if isinstance(item, str):
            parts = item.replace("(", "").replace(")", "").split(",")
            if len(parts) != 2:
                raise ConfigError(f"composition {item!r} is not 'n_cs,n_def'")
            try:
                item = (int(parts[0]), int(parts[1]))
            except ValueError:
                raise ConfigError(f"composition {item!r} is not 'n_cs,n_def'") from None
        a, b = item
        if a < 0 or b < 0:
            raise ConfigError(f"composition {item!r} has a negative entry")
        out.append((int(a), int(b)))
    if not out:
        raise ConfigError("no compositions given")
    return out


def run_table_sweep(cfg: ScenarioConfig | str | Path, compositions, out_dir=None) -> list[dict]:
    """One GMRES run per (n_cs, n_def) on a shared mesh and decomposition.

    n_cs counts DtN vectors in total and must be a multiple of S; n_def takes
    the quasimodes closest to k. Failures are recorded per row.
    """
    if not isinstance(cfg, ScenarioConfig):
        cfg = load_config(cfg)
    if out_dir is not None:
        cfg = cfg.with_output(out_dir)
    comps = parse_compositions(compositions)
    out = Path(cfg.output.dir)
    (out / "rows").mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(dump_config(cfg))
    # the sweep needs the adapted deflation chain except for the pure one-level row
    setup = prepare(replace(cfg, preconditioner=replace(cfg.preconditioner, variant="oras")))
    g = cfg.geometry
    cache: dict = {}
    rows = []
    for n_cs, n_def in comps:
        row = dict(n_cs=n_cs, n_def=n_def, n_cs_per_subdomain=n_cs // setup.dec.S, iterations="",
                   converged="", final_residual="", status="ok", error="")
        try:
            if n_cs % setup.dec.S:
                raise ConfigError(f"n_cs={n_cs} is not a multiple of S={setup.dec.S}")
            if n_def and not g.cavity:
                raise ConfigError("quasimode deflation needs a cavity")
            if n_cs == n_def == 0:
                chain = make_chain(setup, "oras", None)
            else:
                modes = nearest_modes(cfg.k, g.L_O, g.l_O, count=n_def) if n_def else []
                basis = second_level(setup, n_cs // setup.dec.S, modes,
                                     cfg.preconditioner.dtn_selection, cache)
                chain = make_chain(setup, "oras+adef", basis)
            trace = solve(setup, chain)
            write_trace(out / "rows" / f"cs{n_cs}_def{n_def}", trace)
            row.update(iterations=trace.iterations, converged=trace.converged,
                       final_residual=f"{trace.residual_norms[-1]:.17g}")
            if not trace.converged:
                row["status"] = "not_converged"
        except CONFIG_ERRORS as exc:
            row.update(status="config_error", error=f"{type(exc).__name__}: {exc}")
        except NUMERICAL_ERRORS as exc:
            row.update(status="numerical_failure", error=f"{type(exc).__name__}: {exc}")
        rows.append(row)
        log.info("sweep row %s", row)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    return rows


def export_matrix(cfg: ScenarioConfig | str | Path, out_dir=None) -> list[Path]:
    if not isinstance(cfg, ScenarioConfig):
        cfg = load_config(cfg)
    out = Path(out_dir or cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    system = build_system(cfg.geometry_params(), mesh_size(cfg), cfg.discretization.p)
    paths = list(write_system(out / "system", system))
    write_mesh(out / "mesh.txt", system.mesh)
    paths.append(out / "mesh.txt")
    return paths

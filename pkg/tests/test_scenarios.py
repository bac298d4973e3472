import json
from dataclasses import replace

import numpy as np
import pytest
import scipy.io
from hypothesis import given, settings, strategies as st

from quasidd import cli
from quasidd.config import (HEADER, ConfigError, DecompositionSection, ScenarioConfig, dump_config,
                            load_config, parse_config)
from quasidd.fem import build_system
from quasidd.scenarios import (EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, export_matrix, mesh_size,
                               parse_compositions, run_scenario, run_table_sweep)

SMALL = f"""{HEADER}
geometry.L_x = 1.0
geometry.L_y = 0.6
geometry.L_pml = 0.3
discretization.p = 1
discretization.n_lambda = 2.7
decomposition.S = 4
decomposition.overlap = 1
"""

MINIMAL = f"""{HEADER}
geometry.L_x = 1.0
geometry.L_y = 0.6
geometry.L_pml = 0.3
geometry.cavity = false
geometry.k = 6.0
discretization.p = 1
discretization.n_lambda = 10
decomposition.S = 1
decomposition.overlap = 1
solver.rhs = random
"""


def write(tmp_path, text, name="c.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


# -- config -------------------------------------------------------------------

def test_header_only_gives_defaults():
    cfg = parse_config(HEADER + "\n")
    assert cfg == ScenarioConfig()
    assert cfg.k == pytest.approx(23.593, abs=1e-3)
    assert cfg.decomposition == DecompositionSection(S=8, layout="strips_x", overlap=2)


def test_dump_parse_round_trip():
    cfg = parse_config(SMALL + "preconditioner.variant = oras+adef\npreconditioner.quasimodes = (0,3) (1,3)\n"
                       "diagnostics.bounds = (1,10,5)\nseed = 7\n")
    assert parse_config(dump_config(cfg)) == cfg
    assert cfg.deflation_modes() == [(0, 3), (1, 3)]
    assert cfg.seed == 7


def test_auto_quasimodes_round_trip():
    cfg = parse_config(SMALL + "preconditioner.variant = oras+adef\npreconditioner.quasimodes = auto\n")
    assert cfg.preconditioner.quasimodes is None
    assert (0, 3) in cfg.deflation_modes()
    assert parse_config(dump_config(cfg)) == cfg


@settings(max_examples=30, deadline=None)
@given(S=st.integers(1, 32), overlap=st.integers(1, 4), tol=st.floats(1e-12, 0.5),
       k=st.floats(0.5, 200), seed=st.integers(0, 2**32))
def test_round_trip_property(S, overlap, tol, k, seed):
    text = (f"{HEADER}\ngeometry.k = {k!r}\ndecomposition.S = {S}\ndecomposition.overlap = {overlap}\n"
            f"solver.tol = {tol!r}\nseed = {seed}\n")
    cfg = parse_config(text)
    assert parse_config(dump_config(cfg)) == cfg
    assert cfg.k == k


@pytest.mark.parametrize("text, fragment", [
    ("geometry.L_x = 1\n", "first line"),
    (HEADER + "\ngeometry.colour = 1\n", "unknown key"),
    (HEADER + "\nmesh.h = 0.1\n", "unknown key"),
    (HEADER + "\nsolver.tol = 1e-6\nsolver.tol = 1e-7\n", "duplicate"),
    (HEADER + "\nsolver.maxiter = lots\n", "bad value"),
    (HEADER + "\nsolver.tol\n", "key = value"),
    (HEADER + "\ngeometry.k = 5\ngeometry.k_mode = (0,3)\n", "exactly one"),
    (HEADER + "\npreconditioner.n_cs = 2\n", "requires preconditioner.variant"),
    (HEADER + "\ngeometry.cavity = false\ngeometry.k = 5\npreconditioner.variant = oras+adef\n"
              "preconditioner.quasimodes = (0,3)\n", "cavity"),
    (HEADER + "\ndecomposition.layout = hexagons\n", "layout"),
    (HEADER + "\ndiagnostics.bounds = (3,2,1)\n", "bound triple"),
    (HEADER + "\ndiagnostics.bounds = (1,2)\n", "bad value"),
    (HEADER + "\nsolver.rhs = point\n", "solver.rhs"),
    (HEADER + "\npreconditioner.dtn_selection = largest\n", "dtn_selection"),
    (HEADER + "\ndiscretization.p = 4\n", "discretization.p"),
])
def test_rejections(text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_config(text)


def test_comments_and_blank_lines():
    cfg = parse_config("# scenario\n\n" + HEADER + "\n# note\nsolver.tol = 1e-8  # tighter\n")
    assert cfg.solver.tol == 1e-8


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.cfg")


def test_parse_compositions():
    assert parse_compositions(["0,0", "(32,0)", (16, 16)]) == [(0, 0), (32, 0), (16, 16)]
    for bad in (["1"], ["a,b"], ["-1,0"], []):
        with pytest.raises(ConfigError):
            parse_compositions(bad)


# -- runs -----------------------------------------------------------------------

def test_minimal_run_converges_in_one_iteration(tmp_path):
    m = run_scenario(write(tmp_path, MINIMAL), tmp_path / "out")
    assert m.status == "ok" and m.iterations == 1 and m.converged
    on_disk = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert on_disk["iterations"] == 1 and on_disk["status"] == "ok"


def test_manifest_reports_system_size(tmp_path):
    cfg = load_config(write(tmp_path, SMALL))
    m = run_scenario(cfg, tmp_path / "out")
    system = build_system(cfg.geometry_params(), mesh_size(cfg), cfg.discretization.p)
    assert m.N == system.n
    assert len(m.subdomain_sizes) == 4
    assert set(m.outputs) >= {"config.cfg", "gmres_residuals.csv", "gmres_hr.csv", "plateaus.csv",
                              "spectrum.csv", "trajectories.csv"}
    assert m.spectrum_mode == "dense" and len(m.smallest_eigenvalues) == 2


def test_manifest_written_on_config_failure(tmp_path):
    # parses fine, but the cavity does not fit inside the domain
    cfg = load_config(write(tmp_path, SMALL + "geometry.L_O = 3.0\n"))
    m = run_scenario(cfg, tmp_path / "out")
    assert m.status == "config_error" and m.exit_code == EXIT_CONFIG
    on_disk = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert on_disk["error"].startswith("GeometryError") and on_disk["N"] is None


def test_vanishing_load_is_a_config_error(tmp_path):
    m = run_scenario(load_config(write(tmp_path, MINIMAL.replace("solver.rhs = random\n", ""))),
                     tmp_path / "out")
    assert m.status == "config_error" and "vanishes" in m.error


def test_non_convergence_is_reported(tmp_path):
    m = run_scenario(load_config(write(tmp_path, SMALL + "solver.maxiter = 2\n")), tmp_path / "out")
    assert m.status == "not_converged" and m.exit_code == EXIT_NUMERICAL
    assert m.iterations == 2


def test_second_level_run(tmp_path):
    text = SMALL + ("preconditioner.variant = oras+adef\npreconditioner.n_cs = 2\n"
                    "preconditioner.quasimodes = (0,3)\ndiagnostics.bounds = (1,5,3)\n")
    m = run_scenario(load_config(write(tmp_path, text)), tmp_path / "out")
    assert m.status == "ok"
    assert (m.n_cs, m.n_def) == (8, 1)
    assert m.second_condition_margin is not None
    assert "bounds.csv" in m.outputs


def test_reproducible_csv_outputs(tmp_path):
    cfg = load_config(write(tmp_path, SMALL + "solver.random_x0 = true\nseed = 3\n"))
    run_scenario(cfg, tmp_path / "a")
    run_scenario(cfg, tmp_path / "b")
    csvs = sorted(p.name for p in (tmp_path / "a").glob("*.csv"))
    assert len(csvs) >= 4
    for name in csvs:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_changes_random_inputs(tmp_path):
    base = SMALL + "solver.random_x0 = true\n"
    a = run_scenario(load_config(write(tmp_path, base + "seed = 1\n", "a.cfg")), tmp_path / "a")
    b = run_scenario(load_config(write(tmp_path, base + "seed = 2\n", "b.cfg")), tmp_path / "b")
    assert a.outputs["gmres_residuals.csv"] != b.outputs["gmres_residuals.csv"]


def test_sweep_rows(tmp_path):
    cfg = load_config(write(tmp_path, SMALL))
    one = run_scenario(cfg, tmp_path / "one")
    rows = run_table_sweep(cfg, [(0, 0), (8, 0), (0, 2), (4, 1), (3, 0)], tmp_path / "sweep")
    assert rows[0]["iterations"] == one.iterations
    assert [r["status"] for r in rows[:4]] == ["ok"] * 4
    assert rows[4]["status"] == "config_error" and "multiple" in rows[4]["error"]
    assert all(r["iterations"] <= one.iterations for r in rows[1:4])
    lines = (tmp_path / "sweep" / "sweep.csv").read_text().splitlines()
    assert lines[0].startswith("n_cs,n_def") and len(lines) == 6
    assert (tmp_path / "sweep" / "rows" / "cs0_def0_residuals.csv").exists()


def test_export_matrix(tmp_path):
    cfg = load_config(write(tmp_path, SMALL))
    paths = export_matrix(cfg, tmp_path / "exp")
    names = {p.name for p in paths}
    assert {"system_A.mtx", "system_b.mtx", "mesh.txt"} <= names
    system = build_system(cfg.geometry_params(), mesh_size(cfg), cfg.discretization.p)
    A = scipy.io.mmread(tmp_path / "exp" / "system_A.mtx").tocsr()
    assert abs(A - system.A).max() <= 1e-14 * abs(system.A).max()
    b = np.asarray(scipy.io.mmread(tmp_path / "exp" / "system_b.mtx")).ravel()
    np.testing.assert_allclose(b, system.b, rtol=1e-15, atol=1e-15)


# -- command line -----------------------------------------------------------------

def test_cli_run_and_plot(tmp_path, capsys):
    cfg = write(tmp_path, SMALL)
    assert cli.main(["run", str(cfg), "--out", str(tmp_path / "r")]) == EXIT_OK
    assert "status=ok" in capsys.readouterr().out
    assert cli.main(["plot", str(tmp_path / "r")]) == EXIT_OK
    for name in ("residuals.svg", "spectrum.svg"):
        assert (tmp_path / "r" / name).read_text().lstrip().startswith("<?xml")


def test_cli_sweep_and_plot(tmp_path, capsys):
    cfg = write(tmp_path, SMALL)
    code = cli.main(["sweep", str(cfg), "--compositions", "0,0", "4,1", "--out", str(tmp_path / "s")])
    assert code == EXIT_OK
    assert capsys.readouterr().out.splitlines()[0] == "n_cs,n_def,iterations,status"
    assert cli.main(["plot", str(tmp_path / "s")]) == EXIT_OK
    assert (tmp_path / "s" / "residuals.svg").exists()


def test_cli_export(tmp_path):
    assert cli.main(["export-matrix", str(write(tmp_path, SMALL)), "--out", str(tmp_path / "e")]) == EXIT_OK
    assert (tmp_path / "e" / "system_A.mtx").exists()


def test_cli_exit_codes(tmp_path):
    bad = write(tmp_path, HEADER + "\nsolver.typo = 1\n", "bad.cfg")
    assert cli.main(["run", str(bad)]) == EXIT_CONFIG
    assert cli.main(["run", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG
    assert cli.main(["frobnicate"]) == EXIT_CONFIG
    assert cli.main(["plot", str(tmp_path / "nowhere")]) == EXIT_CONFIG
    assert cli.main(["sweep", str(write(tmp_path, SMALL)), "--compositions", "3,0",
                     "--out", str(tmp_path / "s")]) == EXIT_CONFIG
    slow = write(tmp_path, SMALL + "solver.maxiter = 2\n", "slow.cfg")
    assert cli.main(["run", str(slow), "--out", str(tmp_path / "slow")]) == EXIT_NUMERICAL


def test_shipped_configs_parse():
    from pathlib import Path
    configs = sorted((Path(__file__).resolve().parent.parent / "configs").glob("*.cfg"))
    assert len(configs) >= 5
    for p in configs:
        cfg = load_config(p)
        assert parse_config(dump_config(cfg)) == cfg
    comp = load_config(configs[0].parent / "composition.cfg")
    assert replace(comp.decomposition) == DecompositionSection(S=16, layout="strips_x", overlap=1)

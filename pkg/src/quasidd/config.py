"""Scenario configuration: dataclasses and the line-oriented ``key = value`` format.

A file starts with the header line ``quasidd-config v1``. Every other
non-blank line not starting with ``#`` is ``section.key = value``. Unknown
sections or keys, duplicates and malformed values are rejected.
"""
from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .fem import GeometryParams
from .partition import LAYOUTS
from .precond import DTN_SELECTIONS, VARIANTS, nearest_modes, quasimode_wavenumber

HEADER = "quasidd-config v1"
SPECTRUM_MODES = ("auto", "dense", "near", "off")
RHS_KINDS = ("scattering", "random")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GeometrySection:
    L_x: float = 2.0
    L_y: float = 1.5
    L_pml: float = 0.5
    L_O: float = 1.3
    l_O: float = 0.4
    t_w: float = 0.1
    anchor_x: float | None = None
    anchor_y: float | None = None
    theta: float = 4 * math.pi / 10
    k: float | None = None
    k_mode: tuple[int, int] | None = (0, 3)
    cavity: bool = True


@dataclass(frozen=True)
class DiscretizationSection:
    p: int = 2
    n_lambda: float = 8.0


@dataclass(frozen=True)
class DecompositionSection:
    S: int = 8
    layout: str = "strips_x"
    overlap: int = 2


@dataclass(frozen=True)
class PreconditionerSection:
    variant: str = "oras"
    n_cs: int = 0                                    # DtN vectors per subdomain
    quasimodes: tuple[tuple[int, int], ...] | None = ()  # None: all modes within 5% of k
    n_def: int | None = None                         # closest quasimodes by count
    dtn_selection: str = "abs-real"


@dataclass(frozen=True)
class SolverSection:
    tol: float = 1e-6
    maxiter: int = 500
    hr_every: int = 1
    record_hr: bool = True
    random_x0: bool = False
    rhs: str = "scattering"                          # or "random" (seeded)


@dataclass(frozen=True)
class DiagnosticsSection:
    spectrum: str = "auto"
    spectrum_count: int = 6
    dense_cap: int = 4000
    plateau_window: int = 10
    plateau_rate: float = 0.99
    trajectory_targets: int = 2
    match_threshold: float = 1e-2
    bounds: tuple[tuple[int, int, int], ...] = ()   # (J, l, m)
    bound_selection: str = "smallest-modulus"
    write_decomposition: bool = False
    write_matrices: bool = False


@dataclass(frozen=True)
class OutputSection:
    dir: str = "runs/default"


@dataclass(frozen=True)
class ScenarioConfig:
    geometry: GeometrySection = field(default_factory=GeometrySection)
    discretization: DiscretizationSection = field(default_factory=DiscretizationSection)
    decomposition: DecompositionSection = field(default_factory=DecompositionSection)
    preconditioner: PreconditionerSection = field(default_factory=PreconditionerSection)
    solver: SolverSection = field(default_factory=SolverSection)
    diagnostics: DiagnosticsSection = field(default_factory=DiagnosticsSection)
    output: OutputSection = field(default_factory=OutputSection)
    seed: int = 0

    @property
    def k(self) -> float:
        g = self.geometry
        if g.k is not None:
            return g.k
        return quasimode_wavenumber(*g.k_mode, g.L_O, g.l_O)

    def geometry_params(self) -> GeometryParams:
        g = self.geometry
        anchor = None if g.anchor_x is None else (g.anchor_x, g.anchor_y)
        return GeometryParams(L_x=g.L_x, L_y=g.L_y, L_pml=g.L_pml, L_O=g.L_O, l_O=g.l_O,
                              t_w=g.t_w, cavity_anchor=anchor, theta=g.theta, k=self.k,
                              cavity=g.cavity)

    def deflation_modes(self) -> list[tuple[int, int]]:
        pc, g = self.preconditioner, self.geometry
        if pc.n_def is not None:
            return nearest_modes(self.k, g.L_O, g.l_O, count=pc.n_def) if pc.n_def else []
        if pc.quasimodes is None:
            return nearest_modes(self.k, g.L_O, g.l_O)
        return list(pc.quasimodes)

    def with_output(self, path) -> "ScenarioConfig":
        return replace(self, output=OutputSection(str(path)))

    def digest(self) -> str:
        return hashlib.sha256(dump_config(self).encode()).hexdigest()


SECTIONS = {
    "geometry": GeometrySection,
    "discretization": DiscretizationSection,
    "decomposition": DecompositionSection,
    "preconditioner": PreconditionerSection,
    "solver": SolverSection,
    "diagnostics": DiagnosticsSection,
    "output": OutputSection,
}

# value kinds per key; anything not listed is a float
_KINDS = {
    ("geometry", "anchor_x"): "optfloat",
    ("geometry", "anchor_y"): "optfloat",
    ("geometry", "k"): "optfloat",
    ("geometry", "k_mode"): "optpair",
    ("geometry", "cavity"): "bool",
    ("discretization", "p"): "int",
    ("decomposition", "S"): "int",
    ("decomposition", "layout"): "str",
    ("decomposition", "overlap"): "int",
    ("preconditioner", "variant"): "str",
    ("preconditioner", "n_cs"): "int",
    ("preconditioner", "quasimodes"): "pairs",
    ("preconditioner", "n_def"): "optint",
    ("preconditioner", "dtn_selection"): "str",
    ("solver", "maxiter"): "int",
    ("solver", "hr_every"): "int",
    ("solver", "record_hr"): "bool",
    ("solver", "random_x0"): "bool",
    ("solver", "rhs"): "str",
    ("diagnostics", "spectrum"): "str",
    ("diagnostics", "spectrum_count"): "int",
    ("diagnostics", "dense_cap"): "int",
    ("diagnostics", "plateau_window"): "int",
    ("diagnostics", "trajectory_targets"): "int",
    ("diagnostics", "bounds"): "triples",
    ("diagnostics", "bound_selection"): "str",
    ("diagnostics", "write_decomposition"): "bool",
    ("diagnostics", "write_matrices"): "bool",
    ("output", "dir"): "str",
}

_TUPLE = re.compile(r"\(([^()]*)\)")


def _tuples(text: str, size: int) -> tuple[tuple[int, ...], ...]:
    text = text.strip()
    if text in ("", "none"):
        return ()
    found = _TUPLE.findall(text)
    if not found or _TUPLE.sub("", text).strip(" ,"):
        raise ValueError(f"expected a list of {size}-tuples like (0,3), got {text!r}")
    out = []
    for item in found:
        parts = [int(x) for x in item.split(",")]
        if len(parts) != size:
            raise ValueError(f"expected {size} entries in ({item})")
        out.append(tuple(parts))
    return tuple(out)


def _parse_value(kind: str, text: str):
    text = text.strip()
    if kind == "str":
        return text
    if kind == "int":
        return int(text)
    if kind == "optint":
        return None if text == "none" else int(text)
    if kind == "bool":
        if text.lower() in ("true", "yes", "1"):
            return True
        if text.lower() in ("false", "no", "0"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if kind == "optfloat":
        return None if text == "none" else float(text)
    if kind == "optpair":
        if text == "none":
            return None
        pairs = _tuples(text, 2)
        if len(pairs) != 1:
            raise ValueError("expected a single pair")
        return pairs[0]
    if kind == "pairs":
        return None if text == "auto" else _tuples(text, 2)
    if kind == "triples":
        return _tuples(text, 3)
    return float(text)


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return " ".join("(" + ",".join(map(str, t)) + ")" for t in v)
        return "(" + ",".join(map(str, v)) + ")" if v else "none"
    return str(v)


def parse_config(text: str, source: str = "<string>") -> ScenarioConfig:
    lines = text.splitlines()
    body = [(i + 1, ln.strip()) for i, ln in enumerate(lines)]
    body = [(n, ln) for n, ln in body if ln and not ln.startswith("#")]
    if not body or body[0][1] != HEADER:
        raise ConfigError(f"{source}: first line must be '{HEADER}'")
    values: dict[str, dict] = {name: {} for name in SECTIONS}
    seed = 0
    seen = set()
    for lineno, ln in body[1:]:
        if "=" not in ln:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, _, raw = ln.partition("=")
        key = key.strip()
        raw = raw.split("#", 1)[0]
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        seen.add(key)
        if key == "seed":
            try:
                seed = int(raw)
            except ValueError as exc:
                raise ConfigError(f"{source}:{lineno}: {exc}") from None
            continue
        section, dot, name = key.partition(".")
        if not dot or section not in SECTIONS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if name not in {f.name for f in fields(SECTIONS[section])}:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[section][name] = _parse_value(_KINDS.get((section, name), "float"), raw)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    # an explicit wavenumber replaces the default mode pair
    if values["geometry"].get("k") is not None and "k_mode" not in values["geometry"]:
        values["geometry"]["k_mode"] = None
    try:
        cfg = ScenarioConfig(**{s: SECTIONS[s](**v) for s, v in values.items()}, seed=seed)
    except TypeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    validate(cfg, source)
    return cfg


def validate(cfg: ScenarioConfig, source: str = "<config>") -> None:
    def bad(msg):
        raise ConfigError(f"{source}: {msg}")

    g = cfg.geometry
    for name in ("L_x", "L_y", "L_pml", "L_O", "l_O", "t_w"):
        if not getattr(g, name) > 0:
            bad(f"geometry.{name} must be positive")
    if (g.anchor_x is None) != (g.anchor_y is None):
        bad("geometry.anchor_x and geometry.anchor_y go together")
    if (g.k is None) == (g.k_mode is None):
        bad("set exactly one of geometry.k and geometry.k_mode")
    if g.k is not None and not g.k > 0:
        bad("geometry.k must be positive")
    if g.k_mode is not None and min(g.k_mode) < 0:
        bad("geometry.k_mode indices must be nonnegative")
    d = cfg.discretization
    if d.p not in (1, 2, 3):
        bad("discretization.p must be 1, 2 or 3")
    if d.n_lambda < 2 * d.p:
        bad("discretization.n_lambda must be at least 2p")
    dc = cfg.decomposition
    if dc.S < 1:
        bad("decomposition.S must be >= 1")
    if dc.layout not in LAYOUTS:
        bad(f"decomposition.layout must be one of {LAYOUTS}")
    if dc.overlap < 1:
        bad("decomposition.overlap must be >= 1")
    pc = cfg.preconditioner
    if pc.variant not in VARIANTS:
        bad(f"preconditioner.variant must be one of {VARIANTS}")
    if pc.dtn_selection not in DTN_SELECTIONS:
        bad(f"preconditioner.dtn_selection must be one of {DTN_SELECTIONS}")
    if pc.n_cs < 0 or (pc.n_def is not None and pc.n_def < 0):
        bad("second-level sizes must be nonnegative")
    if pc.n_def is not None and pc.quasimodes:
        bad("set either preconditioner.quasimodes or preconditioner.n_def")
    if pc.quasimodes and min(min(t) for t in pc.quasimodes) < 0:
        bad("quasimode indices must be nonnegative")
    wants_def = bool(pc.n_def) or pc.quasimodes is None or bool(pc.quasimodes)
    if pc.variant != "oras+adef" and (wants_def or pc.n_cs > 0):
        bad("a second level requires preconditioner.variant = oras+adef")
    if wants_def and not g.cavity:
        bad("quasimode deflation needs a cavity")
    s = cfg.solver
    if not 0 < s.tol < 1:
        bad("solver.tol must lie in (0, 1)")
    if s.rhs not in RHS_KINDS:
        bad(f"solver.rhs must be one of {RHS_KINDS}")
    if s.maxiter < 1 or s.hr_every < 1:
        bad("solver.maxiter and solver.hr_every must be >= 1")
    dg = cfg.diagnostics
    if dg.spectrum not in SPECTRUM_MODES:
        bad(f"diagnostics.spectrum must be one of {SPECTRUM_MODES}")
    if dg.spectrum == "near" and pc.variant == "oras+adef":
        bad("diagnostics.spectrum = near supports the none and oras variants only")
    if dg.bound_selection not in ("smallest-modulus", "closest"):
        bad("diagnostics.bound_selection must be smallest-modulus or closest")
    if dg.plateau_window < 2 or not 0 < dg.plateau_rate <= 1:
        bad("invalid plateau detection parameters")
    if dg.spectrum_count < 1 or dg.trajectory_targets < 0 or dg.dense_cap < 1:
        bad("diagnostics counts must be positive")
    for J, l, m in dg.bounds:
        if l < 1 or m < 1 or not 0 <= J <= l:
            bad(f"invalid bound triple (J={J}, l={l}, m={m})")


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config(text, str(path))


def dump_config(cfg: ScenarioConfig) -> str:
    out = [HEADER]
    for name in SECTIONS:
        sec = getattr(cfg, name)
        for f in fields(sec):
            v = getattr(sec, f.name)
            text = "auto" if (name, f.name) == ("preconditioner", "quasimodes") and v is None else _format_value(v)
            out.append(f"{name}.{f.name} = {text}")
    out.append(f"seed = {cfg.seed}")
    return "\n".join(out) + "\n"

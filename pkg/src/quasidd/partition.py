"""Overlapping cell-based decompositions and the local Robin problems of ORAS."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fem import AssembledSystem, DofMap, Mesh, edge_mass, scatter
from .linalg import SparseFactorization, sparse_lu_factor

LAYOUTS = ("strips_x", "grid")


class PartitionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Subdomain:
    dofs: np.ndarray          # global dof indices (sorted), defines R_s
    weights: np.ndarray       # partition of unity D_s on local dofs
    cells: np.ndarray         # (nx, ny) bool, overlapping cell set
    core: np.ndarray          # (nx, ny) bool, non-overlapping cell set
    elements: np.ndarray      # triangle indices in the overlapping set
    interface_edges: np.ndarray  # (ne, 4) grid edges, boundary of Omega_s inside the domain

    @property
    def size(self) -> int:
        return len(self.dofs)


@dataclass(frozen=True, eq=False)
class Decomposition:
    n: int
    subdomains: tuple[Subdomain, ...]
    layout: str
    overlap: int
    multiplicity: np.ndarray = field(repr=False)

    @property
    def S(self) -> int:
        return len(self.subdomains)

    @property
    def sizes(self) -> list[int]:
        return [s.size for s in self.subdomains]

    def __iter__(self):
        return iter(self.subdomains)

    def __getitem__(self, s: int) -> Subdomain:
        return self.subdomains[s]


def grid_shape(S: int, aspect: float = 1.0) -> tuple[int, int]:
    """Factor S = Sx * Sy with Sx / Sy as close as possible to ``aspect``."""
    best = None
    for sy in range(1, S + 1):
        if S % sy:
            continue
        sx = S // sy
        score = abs(math.log(sx / sy) - math.log(aspect))
        if best is None or score < best[0]:
            best = (score, sx, sy)
    return best[1], best[2]


def _dilate(cells: np.ndarray) -> np.ndarray:
    out = cells.copy()
    out[1:, :] |= cells[:-1, :]
    out[:-1, :] |= cells[1:, :]
    grown = out.copy()
    grown[:, 1:] |= out[:, :-1]
    grown[:, :-1] |= out[:, 1:]
    return grown


def interface_edges(mesh: Mesh, cells: np.ndarray) -> np.ndarray:
    """Grid edges separating ``cells`` from kept cells outside it."""
    kept = mesh.cell_mask
    outside = kept & ~cells
    nx, ny = cells.shape
    edges = []
    # vertical edge at line i between (i-1, j) and (i, j)
    left = np.zeros((nx + 1, ny), bool)
    left[1:] = cells
    right = np.zeros((nx + 1, ny), bool)
    right[:-1] = cells
    oleft = np.zeros((nx + 1, ny), bool)
    oleft[1:] = outside
    oright = np.zeros((nx + 1, ny), bool)
    oright[:-1] = outside
    for i, j in zip(*np.nonzero((left & oright) | (right & oleft))):
        edges.append((i, j, i, j + 1))
    below = np.zeros((nx, ny + 1), bool)
    below[:, 1:] = cells
    above = np.zeros((nx, ny + 1), bool)
    above[:, :-1] = cells
    obelow = np.zeros((nx, ny + 1), bool)
    obelow[:, 1:] = outside
    oabove = np.zeros((nx, ny + 1), bool)
    oabove[:, :-1] = outside
    for i, j in zip(*np.nonzero((below & oabove) | (above & obelow))):
        edges.append((i, j, i + 1, j))
    return np.asarray(edges, dtype=np.int64).reshape(-1, 4)


def decompose(mesh: Mesh, dofmap: DofMap, S: int, layout: str = "strips_x",
              overlap_layers: int = 2) -> Decomposition:
    if S < 1:
        raise PartitionError("S must be >= 1")
    if overlap_layers < 1:
        raise PartitionError("overlap_layers must be >= 1")
    if layout not in LAYOUTS:
        raise PartitionError(f"unknown layout {layout!r}")
    nx, ny = mesh.shape
    if layout == "strips_x":
        sx, sy = S, 1
    else:
        aspect = (mesh.xs[-1] - mesh.xs[0]) / (mesh.ys[-1] - mesh.ys[0])
        sx, sy = grid_shape(S, aspect)
    if sx > nx or sy > ny:
        raise PartitionError(f"{S} subdomains exceed the {nx}x{ny} cell grid")
    colgroups = np.array_split(np.arange(nx), sx)
    rowgroups = np.array_split(np.arange(ny), sy)
    cell_tris = mesh.cell_triangles()

    raw = []
    for rows in rowgroups:
        for cols in colgroups:
            core = np.zeros((nx, ny), bool)
            core[cols[0]:cols[-1] + 1, rows[0]:rows[-1] + 1] = True
            core &= mesh.cell_mask
            cells = core
            for _ in range(overlap_layers if S > 1 else 0):
                cells = _dilate(cells) & mesh.cell_mask
            elems = cell_tris[cells].ravel()
            elems = np.sort(elems[elems >= 0])
            d = dofmap.elem_dofs[elems].ravel()
            dofs = np.unique(d[d >= 0])
            raw.append((core, cells, elems, dofs))

    mult = np.zeros(dofmap.n_dofs, dtype=np.int64)
    for _, _, _, dofs in raw:
        mult[dofs] += 1
    if np.any(mult == 0):
        raise PartitionError("some dofs are not covered by any subdomain")
    subs = []
    for core, cells, elems, dofs in raw:
        subs.append(Subdomain(dofs=dofs, weights=1.0 / mult[dofs], cells=cells, core=core,
                              elements=elems, interface_edges=interface_edges(mesh, cells)))
    return Decomposition(dofmap.n_dofs, tuple(subs), layout, overlap_layers, mult)


def restrict(dec: Decomposition, s: int, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v)
    if v.shape[0] != dec.n:
        raise ValueError(f"global vector has length {v.shape[0]}, expected {dec.n}")
    return v[dec[s].dofs]


def extend(dec: Decomposition, s: int, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w)
    sub = dec[s]
    if w.shape[0] != sub.size:
        raise ValueError(f"local vector has length {w.shape[0]}, expected {sub.size}")
    out = np.zeros((dec.n,) + w.shape[1:], dtype=np.result_type(w, float))
    out[sub.dofs] = w
    return out


def partition_of_unity(dec: Decomposition, v: np.ndarray) -> np.ndarray:
    """sum_s R_s^T D_s R_s v."""
    out = np.zeros_like(v, dtype=np.result_type(v, float))
    for sub in dec:
        w = v[sub.dofs]
        out[sub.dofs] += sub.weights.reshape((-1,) + (1,) * (w.ndim - 1)) * w
    return out


def local_index(dec: Decomposition, s: int) -> np.ndarray:
    """Global -> local dof map of subdomain s (-1 outside)."""
    loc = -np.ones(dec.n, dtype=np.int64)
    loc[dec[s].dofs] = np.arange(dec[s].size)
    return loc


@dataclass(frozen=True, eq=False)
class LocalProblem:
    B: sp.csr_matrix                 # Neumann restriction minus i k interface mass
    A_neumann: sp.csr_matrix         # restriction of the volume form only
    interface_mass: sp.csr_matrix
    factorization: SparseFactorization

    def solve(self, r: np.ndarray) -> np.ndarray:
        return self.factorization.solve(r)


def local_matrices(system: AssembledSystem, dec: Decomposition, s: int, elem_mats=None):
    sub = dec[s]
    loc = local_index(dec, s)
    Ae = system.elem_mats if elem_mats is None else elem_mats
    An = scatter(Ae, system.dofmap.elem_dofs, sub.size, elements=sub.elements, local_of=loc)
    Mg = edge_mass(system.mesh, system.dofmap, sub.interface_edges, sub.size, local_of=loc)
    return An, Mg


def build_local_problems(system: AssembledSystem, dec: Decomposition) -> list[LocalProblem]:
    k = system.geometry.k
    out = []
    for s in range(dec.S):
        An, Mg = local_matrices(system, dec, s)
        B = (An - 1j * k * Mg).tocsr()
        out.append(LocalProblem(B, An, Mg, sparse_lu_factor(B)))
    return out


def write_decomposition_csv(path, dec: Decomposition, coords: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dof", "x", "y", "subdomain", "weight"])
        rows = []
        for s, sub in enumerate(dec):
            for d, wt in zip(sub.dofs, sub.weights):
                rows.append((int(d), s, wt))
        rows.sort()
        for d, s, wt in rows:
            w.writerow([d, f"{coords[d, 0]:.17g}", f"{coords[d, 1]:.17g}", s, f"{wt:.17g}"])

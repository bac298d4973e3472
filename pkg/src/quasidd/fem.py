"""Structured triangular meshes and Lagrange P1-P3 assembly of the PML Helmholtz problem.

The mesh is a tensor grid whose lines pass through every geometric feature
(PML interfaces, cavity walls); each kept cell is cut into two triangles.
Because of that, the Lagrange nodes of order ``p`` are exactly the points of
the ``p``-times refined tensor grid, which is how dofs are numbered.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .linalg import as_csr

GAMMA_OBS = 1
GAMMA_EXT = 2
TAG_NAMES = {GAMMA_OBS: "Gamma_obs", GAMMA_EXT: "Gamma_ext"}
REGION_DOM = 0
REGION_PML = 1


class GeometryError(ValueError):
    pass


class ResolutionError(ValueError):
    pass


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class GeometryParams:
    """Padded rectangle with a U-shaped cavity open towards -x.

    ``cavity_anchor`` is ``(x, y)``: x of the open edge and y of the cavity
    axis. ``None`` centers the obstacle (walls included) in the domain.
    """

    L_x: float = 2.0
    L_y: float = 1.5
    L_pml: float = 0.5
    L_O: float = 1.3
    l_O: float = 0.4
    t_w: float = 0.1
    cavity_anchor: tuple[float, float] | None = None
    theta: float = 4 * math.pi / 10
    k: float = 23.591
    cavity: bool = True

    def __post_init__(self):
        for name in ("L_x", "L_y", "L_pml", "L_O", "l_O", "t_w", "k"):
            if not getattr(self, name) > 0:
                raise GeometryError(f"{name} must be positive")

    @property
    def anchor(self) -> tuple[float, float]:
        if self.cavity_anchor is not None:
            return tuple(self.cavity_anchor)
        return (-(self.L_O + self.t_w) / 2, 0.0)

    def obstacle_box(self) -> tuple[float, float, float, float]:
        """Outer bounding box (x0, x1, y0, y1) of the walls."""
        x0, yc = self.anchor
        half = self.l_O / 2 + self.t_w
        return x0, x0 + self.L_O + self.t_w, yc - half, yc + half

    def cavity_box(self) -> tuple[float, float, float, float]:
        """Interior (fluid) rectangle of the cavity."""
        x0, yc = self.anchor
        return x0, x0 + self.L_O, yc - self.l_O / 2, yc + self.l_O / 2

    def walls(self) -> list[tuple[float, float, float, float]]:
        x0, x1, y0, y1 = self.obstacle_box()
        cx0, cx1, cy0, cy1 = self.cavity_box()
        return [(x0, x1, y0, cy0), (x0, x1, cy1, y1), (cx1, x1, y0, y1)]

    def replace(self, **kw) -> "GeometryParams":
        from dataclasses import replace
        return replace(self, **kw)


def pml_stretch(x, axis: str, g: GeometryParams):
    """Complex stretching 1 + i sigma/k, sigma = 1/(L_pml - |x| + L) in the layer."""
    if axis not in ("x", "y"):
        raise ValueError(f"axis must be 'x' or 'y', got {axis!r}")
    half = g.L_x if axis == "x" else g.L_y
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    if np.any(ax >= half + g.L_pml):
        raise DomainError("stretching evaluated on or beyond the outer boundary")
    inside = ax > half
    dist = np.where(inside, g.L_pml - ax + half, 1.0)
    gam = np.where(inside, 1 + 1j / (g.k * dist), 1 + 0j)
    return gam[()] if gam.ndim == 0 else gam


def dofs_per_wavelength_to_h(n_lambda: float, k: float, p: int) -> float:
    if n_lambda < 2 * p:
        raise ValueError("need at least 2p dofs per wavelength")
    return 2 * math.pi * p / (k * n_lambda)


# -- mesh -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Mesh:
    xs: np.ndarray            # grid lines
    ys: np.ndarray
    cell_mask: np.ndarray     # (nx, ny) kept cells
    cell_region: np.ndarray   # (nx, ny) REGION_*
    vertices: np.ndarray      # (nv, 2)
    triangles: np.ndarray     # (nt, 3), counter-clockwise
    tri_cell: np.ndarray      # (nt, 2) grid cell (i, j) of each triangle
    tri_half: np.ndarray      # (nt,) 0 = lower-right, 1 = upper-left
    region: np.ndarray        # (nt,)
    edges: np.ndarray         # (ne, 4) boundary edges as grid indices i0, j0, i1, j1
    edge_tags: np.ndarray     # (ne,)
    edge_normals: np.ndarray  # (ne, 2) outward from the computational domain
    vertex_id: np.ndarray = field(repr=False)  # (nx+1, ny+1) -> vertex index or -1

    @property
    def shape(self) -> tuple[int, int]:
        return self.cell_mask.shape

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def edge_endpoints(self) -> np.ndarray:
        e = self.edges
        return np.stack([self.xs[e[:, 0]], self.ys[e[:, 1]],
                         self.xs[e[:, 2]], self.ys[e[:, 3]]], axis=1)

    def cell_triangles(self) -> np.ndarray:
        """(nx, ny, 2) triangle indices per cell, -1 for removed cells."""
        out = -np.ones(self.shape + (2,), dtype=np.int64)
        out[self.tri_cell[:, 0], self.tri_cell[:, 1], self.tri_half] = np.arange(self.n_triangles)
        return out


def _breaks(points, h: float) -> np.ndarray:
    pts = np.unique(np.round(np.asarray(points, dtype=float), 12))
    lines = [pts[:1]]
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(1, math.ceil((b - a) / h - 1e-9))
        lines.append(np.linspace(a, b, n + 1)[1:])
    return np.concatenate(lines)


def grid_mesh(xs, ys, cell_mask=None, cell_region=None) -> Mesh:
    """Triangulate the kept cells of the tensor grid ``xs`` x ``ys``."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    nx, ny = len(xs) - 1, len(ys) - 1
    mask = np.ones((nx, ny), bool) if cell_mask is None else np.asarray(cell_mask, bool)
    region = np.zeros((nx, ny), np.int8) if cell_region is None else np.asarray(cell_region, np.int8)

    used = np.zeros((nx + 1, ny + 1), bool)
    used[:-1, :-1] |= mask
    used[1:, :-1] |= mask
    used[:-1, 1:] |= mask
    used[1:, 1:] |= mask
    vid = -np.ones((nx + 1, ny + 1), dtype=np.int64)
    I, J = np.nonzero(used)  # row-major over i: x-major numbering
    vid[I, J] = np.arange(len(I))
    vertices = np.stack([xs[I], ys[J]], axis=1)

    ci, cj = np.nonzero(mask)
    v00, v10 = vid[ci, cj], vid[ci + 1, cj]
    v11, v01 = vid[ci + 1, cj + 1], vid[ci, cj + 1]
    lower = np.stack([v00, v10, v11], axis=1)
    upper = np.stack([v00, v11, v01], axis=1)
    triangles = np.empty((2 * len(ci), 3), dtype=np.int64)
    triangles[0::2], triangles[1::2] = lower, upper
    tri_cell = np.repeat(np.stack([ci, cj], axis=1), 2, axis=0)
    tri_half = np.tile([0, 1], len(ci)).astype(np.int8)

    padded = np.zeros((nx + 2, ny + 2), dtype=np.int8)  # 0 outside, 1 kept, 2 removed
    padded[1:-1, 1:-1] = np.where(mask, 1, 2)
    edges, tags, normals = [], [], []
    # vertical edges at grid line i, between cells (i-1, j) and (i, j)
    for i in range(nx + 1):
        left, right = padded[i, 1:-1], padded[i + 1, 1:-1]
        for j in np.nonzero((left == 1) != (right == 1))[0]:
            kept_left = left[j] == 1
            other = right[j] if kept_left else left[j]
            edges.append((i, j, i, j + 1))
            tags.append(GAMMA_EXT if other == 0 else GAMMA_OBS)
            normals.append((1.0, 0.0) if kept_left else (-1.0, 0.0))
    for j in range(ny + 1):
        below, above = padded[1:-1, j], padded[1:-1, j + 1]
        for i in np.nonzero((below == 1) != (above == 1))[0]:
            kept_below = below[i] == 1
            other = above[i] if kept_below else below[i]
            edges.append((i, j, i + 1, j))
            tags.append(GAMMA_EXT if other == 0 else GAMMA_OBS)
            normals.append((0.0, 1.0) if kept_below else (0.0, -1.0))

    return Mesh(
        xs=xs, ys=ys, cell_mask=mask, cell_region=region,
        vertices=vertices, triangles=triangles, tri_cell=tri_cell, tri_half=tri_half,
        region=region[tri_cell[:, 0], tri_cell[:, 1]],
        edges=np.asarray(edges, dtype=np.int64).reshape(-1, 4),
        edge_tags=np.asarray(tags, dtype=np.int8),
        edge_normals=np.asarray(normals, dtype=float).reshape(-1, 2),
        vertex_id=vid,
    )


def rectangle_mesh(x0: float, x1: float, y0: float, y1: float, h: float) -> Mesh:
    return grid_mesh(_breaks([x0, x1], h), _breaks([y0, y1], h))


def build_mesh(g: GeometryParams, h_target: float) -> Mesh:
    ax, ay = g.L_x + g.L_pml, g.L_y + g.L_pml
    xpts = [-ax, -g.L_x, g.L_x, ax]
    ypts = [-ay, -g.L_y, g.L_y, ay]
    if g.cavity:
        if h_target > g.t_w + 1e-12:
            raise ResolutionError(f"h_target={h_target} exceeds wall thickness {g.t_w}")
        bx0, bx1, by0, by1 = g.obstacle_box()
        if not (-g.L_x < bx0 and bx1 < g.L_x and -g.L_y < by0 and by1 < g.L_y):
            raise GeometryError("cavity walls do not fit strictly inside the physical domain")
        cx0, cx1, cy0, cy1 = g.cavity_box()
        xpts += [bx0, cx1, bx1]
        ypts += [by0, cy0, cy1, by1]
    xs, ys = _breaks(xpts, h_target), _breaks(ypts, h_target)
    xc, yc = (xs[:-1] + xs[1:]) / 2, (ys[:-1] + ys[1:]) / 2
    X, Y = np.meshgrid(xc, yc, indexing="ij")
    mask = np.ones(X.shape, bool)
    if g.cavity:
        for wx0, wx1, wy0, wy1 in g.walls():
            mask &= ~((X > wx0) & (X < wx1) & (Y > wy0) & (Y < wy1))
    region = np.where((np.abs(X) > g.L_x) | (np.abs(Y) > g.L_y), REGION_PML, REGION_DOM)
    return grid_mesh(xs, ys, mask, region)


def write_mesh(path, mesh: Mesh) -> None:
    ends = mesh.edge_endpoints()
    with open(path, "w") as fh:
        fh.write("quasidd-mesh v1\n")
        fh.write(f"vertices {len(mesh.vertices)}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g}\n")
        fh.write(f"triangles {mesh.n_triangles}\n")
        for (a, b, c), r in zip(mesh.triangles, mesh.region):
            fh.write(f"{a} {b} {c} {'pml' if r == REGION_PML else 'dom'}\n")
        fh.write(f"edges {len(ends)}\n")
        for (x0, y0, x1, y1), t in zip(ends, mesh.edge_tags):
            fh.write(f"{x0:.17g} {y0:.17g} {x1:.17g} {y1:.17g} {TAG_NAMES[t]}\n")


# -- reference element --------------------------------------------------------

# symmetric rules on the reference triangle, weights normalized to area 1
_DUNAVANT5 = [
    ((1 / 3, 1 / 3, 1 / 3), 0.225, 1),
    ((0.059715871789770, 0.470142064105115, 0.470142064105115), 0.132394152788506, 3),
    ((0.797426985353087, 0.101286507323456, 0.101286507323456), 0.125939180544827, 3),
]
_DUNAVANT6 = [
    ((0.501426509658179, 0.249286745170910, 0.249286745170910), 0.116786275726379, 3),
    ((0.873821971016996, 0.063089014491502, 0.063089014491502), 0.050844906370207, 3),
    ((0.053145049844817, 0.310352451033784, 0.636502499121399), 0.082851075618374, 6),
]


def _expand(rule):
    pts, wts = [], []
    for (a, b, c), w, mult in rule:
        if mult == 1:
            perms = [(a, b, c)]
        elif mult == 3:
            perms = [(a, b, c), (b, a, c), (b, c, a)]
        else:
            perms = [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]
        for l1, l2, _ in perms:
            pts.append((l1, l2))
            wts.append(w / 2)
    return np.array(pts), np.array(wts)


@lru_cache(maxsize=None)
def triangle_quadrature(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Points and weights on the unit right triangle (weights sum to 1/2)."""
    if degree <= 5:
        return _expand(_DUNAVANT5)
    if degree <= 6:
        return _expand(_DUNAVANT6)
    raise ValueError(f"no rule of degree {degree}")


def quadrature_degree(p: int) -> int:
    return 5 if p <= 2 else 6


@lru_cache(maxsize=None)
def reference_nodes(p: int) -> np.ndarray:
    """Integer node coordinates (i, j), i + j <= p, ordered by j then i."""
    return np.array([(i, j) for j in range(p + 1) for i in range(p + 1 - j)])


@lru_cache(maxsize=None)
def _basis_coeffs(p: int) -> tuple[np.ndarray, np.ndarray]:
    mono = np.array([(a, b) for a in range(p + 1) for b in range(p + 1 - a)])
    nodes = reference_nodes(p) / p
    V = nodes[:, 0:1] ** mono[:, 0] * nodes[:, 1:2] ** mono[:, 1]
    return mono, np.linalg.inv(V)


def reference_basis(p: int, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values (nq, nloc) and gradients (nq, nloc, 2) of the order-p Lagrange basis."""
    mono, C = _basis_coeffs(p)
    x, y = pts[:, 0:1], pts[:, 1:2]
    a, b = mono[:, 0], mono[:, 1]
    vals = x ** a * y ** b
    dx = np.where(a > 0, a * x ** np.maximum(a - 1, 0) * y ** b, 0.0)
    dy = np.where(b > 0, b * x ** a * y ** np.maximum(b - 1, 0), 0.0)
    phi = vals @ C
    grad = np.stack([dx @ C, dy @ C], axis=-1)
    return phi, grad


def lagrange_1d(p: int, t: np.ndarray) -> np.ndarray:
    """Equispaced 1D Lagrange basis on [0, 1], shape (len(t), p+1)."""
    nodes = np.linspace(0, 1, p + 1)
    t = np.asarray(t, dtype=float)[:, None]
    out = np.ones((t.shape[0], p + 1))
    for a in range(p + 1):
        for b in range(p + 1):
            if a != b:
                out[:, a] *= (t[:, 0] - nodes[b]) / (nodes[a] - nodes[b])
    return out


# -- dofs ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DofMap:
    p: int
    elem_dofs: np.ndarray    # (nt, nloc), -1 for eliminated Dirichlet nodes
    n_dofs: int
    coords: np.ndarray       # (n_dofs, 2)
    node_id: np.ndarray      # (p*nx+1, p*ny+1) refined-grid node -> dof, -1 otherwise
    dirichlet_coords: np.ndarray

    def edge_dofs(self, edge) -> np.ndarray:
        """Dofs along a grid edge (i0, j0, i1, j1), ordered from start to end (-1 = eliminated)."""
        i0, j0, i1, j1 = edge
        p = self.p
        I = np.linspace(p * i0, p * i1, p + 1).round().astype(int)
        J = np.linspace(p * j0, p * j1, p + 1).round().astype(int)
        return self.node_id[I, J]


def build_dofmap(mesh: Mesh, p: int, eliminate_dirichlet: bool = True) -> DofMap:
    if p not in (1, 2, 3):
        raise ValueError("order p must be 1, 2 or 3")
    nx, ny = mesh.shape
    used = np.zeros((p * nx + 1, p * ny + 1), bool)
    for ci, cj in zip(*np.nonzero(mesh.cell_mask)):
        used[p * ci:p * ci + p + 1, p * cj:p * cj + p + 1] = True
    xr = np.interp(np.arange(p * nx + 1) / p, np.arange(nx + 1), mesh.xs)
    yr = np.interp(np.arange(p * ny + 1) / p, np.arange(ny + 1), mesh.ys)
    dirichlet = np.zeros_like(used)
    if eliminate_dirichlet:
        for e, t in zip(mesh.edges, mesh.edge_tags):
            if t == GAMMA_EXT:
                i0, j0, i1, j1 = e
                I = np.linspace(p * i0, p * i1, p + 1).round().astype(int)
                J = np.linspace(p * j0, p * j1, p + 1).round().astype(int)
                dirichlet[I, J] = True
    free = used & ~dirichlet
    node_id = -np.ones(used.shape, dtype=np.int64)
    I, J = np.nonzero(free)
    node_id[I, J] = np.arange(len(I))
    coords = np.stack([xr[I], yr[J]], axis=1)
    DI, DJ = np.nonzero(dirichlet & used)
    dcoords = np.stack([xr[DI], yr[DJ]], axis=1)

    ref = reference_nodes(p)
    ci, cj = mesh.tri_cell[:, 0], mesh.tri_cell[:, 1]
    lower = mesh.tri_half == 0
    # lower triangle (v00, v10, v11): node (i, j) -> (i + j, j); upper (v00, v11, v01): (i, i + j)
    off_i = np.where(lower[:, None], ref[:, 0] + ref[:, 1], ref[:, 0])
    off_j = np.where(lower[:, None], ref[:, 1], ref[:, 0] + ref[:, 1])
    elem_dofs = node_id[p * ci[:, None] + off_i, p * cj[:, None] + off_j]
    return DofMap(p, elem_dofs, len(I), coords, node_id, dcoords)


# -- assembly -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ElementGeometry:
    detJ: np.ndarray         # (nt,)
    qpts: np.ndarray         # (nt, nq, 2) physical quadrature points
    weights: np.ndarray      # (nq,) reference weights
    phi: np.ndarray          # (nq, nloc)
    grad: np.ndarray         # (nt, nq, nloc, 2) physical gradients


def element_geometry(mesh: Mesh, p: int, degree: int | None = None) -> ElementGeometry:
    pts, wts = triangle_quadrature(quadrature_degree(p) if degree is None else degree)
    phi, gref = reference_basis(p, pts)
    v = mesh.vertices[mesh.triangles]
    a, b, c = v[:, 0], v[:, 1], v[:, 2]
    J = np.stack([b - a, c - a], axis=2)  # columns are edge vectors
    detJ = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    if np.any(detJ <= 0):
        raise GeometryError("negatively oriented triangle")
    invJ = np.linalg.inv(J)
    qpts = a[:, None, :] + np.einsum("eij,qj->eqi", J, pts)
    grad = np.einsum("eji,qkj->eqki", invJ, gref)  # invJ^T @ grad_ref
    return ElementGeometry(detJ, qpts, wts, phi, grad)


def element_matrices(geo: ElementGeometry, cxx, cyy, cm) -> tuple[np.ndarray, np.ndarray]:
    """Element stiffness int(cxx dxu dxv + cyy dyu dyv) and mass int(cm u v).

    The coefficient arguments are arrays of shape (nt, nq).
    """
    w = geo.weights[None, :] * geo.detJ[:, None]
    gx, gy = geo.grad[..., 0], geo.grad[..., 1]
    Ke = (np.einsum("eq,eqi,eqj->eij", w * cxx, gx, gx)
          + np.einsum("eq,eqi,eqj->eij", w * cyy, gy, gy))
    Me = np.einsum("eq,qi,qj->eij", w * cm, geo.phi, geo.phi)
    return Ke, Me


def scatter(elem_mats: np.ndarray, elem_dofs: np.ndarray, n: int,
            elements: np.ndarray | None = None, local_of=None) -> sp.csr_matrix:
    """Sum element matrices into an n x n CSR matrix, skipping dofs < 0.

    ``local_of`` optionally maps global dofs to a local numbering (-1 = absent).
    """
    if elements is not None:
        elem_mats, elem_dofs = elem_mats[elements], elem_dofs[elements]
    dofs = elem_dofs if local_of is None else np.where(elem_dofs >= 0, local_of[np.maximum(elem_dofs, 0)], -1)
    nloc = dofs.shape[1]
    rows = np.repeat(dofs, nloc, axis=1).ravel()
    cols = np.tile(dofs, (1, nloc)).ravel()
    vals = elem_mats.reshape(len(dofs), -1).ravel()
    keep = (rows >= 0) & (cols >= 0)
    return as_csr(sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n)))


def edge_mass_1d(p: int) -> np.ndarray:
    t, w = np.polynomial.legendre.leggauss(p + 2)
    t, w = (t + 1) / 2, w / 2
    psi = lagrange_1d(p, t)
    return np.einsum("q,qa,qb->ab", w, psi, psi)


def edge_mass(mesh: Mesh, dofmap: DofMap, edges: np.ndarray, n: int, local_of=None,
              coef: complex = 1.0) -> sp.csr_matrix:
    """Boundary mass matrix coef * int_e u v summed over grid edges."""
    if len(edges) == 0:
        return sp.csr_matrix((n, n), dtype=complex)
    m1 = edge_mass_1d(dofmap.p)
    lengths = np.hypot(mesh.xs[edges[:, 2]] - mesh.xs[edges[:, 0]],
                       mesh.ys[edges[:, 3]] - mesh.ys[edges[:, 1]])
    mats = coef * lengths[:, None, None] * m1[None]
    dofs = np.array([dofmap.edge_dofs(e) for e in edges])
    return scatter(mats, dofs, n, local_of=local_of)


@dataclass(frozen=True, eq=False)
class AssembledSystem:
    A: sp.csr_matrix
    b: np.ndarray
    dofmap: DofMap
    mesh: Mesh
    geometry: GeometryParams
    elem_mats: np.ndarray = field(repr=False)  # (nt, nloc, nloc) contributions to A

    @property
    def n(self) -> int:
        return self.dofmap.n_dofs


def helmholtz_coefficients(g: GeometryParams | None, qpts: np.ndarray):
    if g is None:
        one = np.ones(qpts.shape[:2], dtype=complex)
        return one, one, one
    gx = pml_stretch(qpts[..., 0], "x", g)
    gy = pml_stretch(qpts[..., 1], "y", g)
    return gy / gx, gx / gy, gx * gy


def assemble_operator(mesh: Mesh, dofmap: DofMap, k: float, g: GeometryParams | None = None):
    """Element matrices and global matrix of K(gamma) - k^2 M(gamma).

    ``g=None`` assembles the plain Helmholtz operator (no stretching).
    """
    geo = element_geometry(mesh, dofmap.p)
    cxx, cyy, cm = helmholtz_coefficients(g, geo.qpts)
    Ke, Me = element_matrices(geo, cxx, cyy, cm)
    Ae = Ke - k ** 2 * Me
    return Ae, scatter(Ae, dofmap.elem_dofs, dofmap.n_dofs)


def neumann_load(mesh: Mesh, dofmap: DofMap, g: GeometryParams) -> np.ndarray:
    """b_i = -int_{Gamma_obs} dn(u_inc) phi_i for the incident plane wave."""
    b = np.zeros(dofmap.n_dofs, dtype=complex)
    sel = np.nonzero(mesh.edge_tags == GAMMA_OBS)[0]
    if len(sel) == 0:
        return b
    p = dofmap.p
    t, w = np.polynomial.legendre.leggauss(p + 4)
    t, w = (t + 1) / 2, w / 2
    psi = lagrange_1d(p, t)
    d = np.array([math.cos(g.theta), math.sin(g.theta)])
    ends = mesh.edge_endpoints()
    for e in sel:
        x0, y0, x1, y1 = ends[e]
        n = mesh.edge_normals[e]
        length = math.hypot(x1 - x0, y1 - y0)
        X, Y = x0 + t * (x1 - x0), y0 + t * (y1 - y0)
        uinc = np.exp(1j * g.k * (d[0] * X + d[1] * Y))
        dn = 1j * g.k * (d @ n) * uinc
        contrib = -length * (w * dn) @ psi
        dofs = dofmap.edge_dofs(mesh.edges[e])
        ok = dofs >= 0
        np.add.at(b, dofs[ok], contrib[ok])
    return b


def assemble(g: GeometryParams, mesh: Mesh, dofmap: DofMap) -> AssembledSystem:
    Ae, A = assemble_operator(mesh, dofmap, g.k, g)
    b = neumann_load(mesh, dofmap, g)
    return AssembledSystem(A, b, dofmap, mesh, g, Ae)


def build_system(g: GeometryParams, h: float, p: int) -> AssembledSystem:
    mesh = build_mesh(g, h)
    return assemble(g, mesh, build_dofmap(mesh, p))


def load_vector(mesh: Mesh, dofmap: DofMap, f) -> np.ndarray:
    """int f phi_i for a vectorized source f(x, y)."""
    geo = element_geometry(mesh, dofmap.p, degree=6)
    fq = f(geo.qpts[..., 0], geo.qpts[..., 1])
    fe = np.einsum("eq,e,q,qi->ei", fq, geo.detJ, geo.weights, geo.phi)
    b = np.zeros(dofmap.n_dofs, dtype=np.result_type(fe, float))
    ok = dofmap.elem_dofs >= 0
    np.add.at(b, dofmap.elem_dofs[ok], fe[ok])
    return b


def l2_error(mesh: Mesh, dofmap: DofMap, u: np.ndarray, exact) -> float:
    """L2 norm of u_h - exact; eliminated Dirichlet nodes count as zero."""
    geo = element_geometry(mesh, dofmap.p, degree=6)
    ue = np.where(dofmap.elem_dofs >= 0, u[np.maximum(dofmap.elem_dofs, 0)], 0)
    uh = ue @ geo.phi.T
    err = np.abs(uh - exact(geo.qpts[..., 0], geo.qpts[..., 1])) ** 2
    return float(np.sqrt(np.einsum("eq,e,q->", err, geo.detJ, geo.weights)))


def write_system(prefix, system: AssembledSystem) -> tuple[Path, Path]:
    from .linalg import write_matrix_market
    prefix = Path(prefix)
    pa, pb = prefix.with_name(prefix.name + "_A.mtx"), prefix.with_name(prefix.name + "_b.mtx")
    write_matrix_market(pa, system.A, comment="quasidd helmholtz matrix")
    write_matrix_market(pb, system.b, comment="quasidd helmholtz rhs")
    return pa, pb

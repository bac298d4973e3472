"""ORAS, deflation projectors, quasimode vectors and a DtN coarse space."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .fem import AssembledSystem, GeometryError, GeometryParams, assemble_operator
from .linalg import SingularMatrix, sparse_lu_factor, write_matrix_market
from .partition import Decomposition, LocalProblem, local_index, local_matrices

log = logging.getLogger(__name__)

LABEL_CS = "coarse-space"
LABEL_DEF = "quasimode-deflation"
VARIANTS = ("none", "oras", "oras+adef")


class DeflationSetupError(RuntimeError):
    pass


def apply_oras(dec: Decomposition, locals_: list[LocalProblem], v: np.ndarray) -> np.ndarray:
    """sum_s R_s^T D_s B_s^{-1} R_s v; accepts a vector or a block of columns."""
    v = np.asarray(v)
    out = np.zeros(v.shape, dtype=complex)
    for sub, lp in zip(dec, locals_):
        w = lp.solve(v[sub.dofs])
        out[sub.dofs] += sub.weights.reshape((-1,) + (1,) * (v.ndim - 1)) * w
    return out


# -- quasimodes ---------------------------------------------------------------

def quasimode_wavenumber(m: int, n: int, L_O: float, l_O: float) -> float:
    """Resonance of the closed cavity, Dirichlet on the open edge, Neumann elsewhere."""
    if m < 0 or n < 0:
        raise ValueError("mode indices must be nonnegative")
    return math.pi * math.sqrt((m + 0.5) ** 2 / L_O ** 2 + n ** 2 / l_O ** 2)


def nearest_modes(k: float, L_O: float, l_O: float, count: int | None = None,
                  rel_window: float | None = 0.05) -> list[tuple[int, int]]:
    """Mode indices (m, n) sorted by |k_mn - k|.

    With ``count`` the closest ``count`` modes are returned, otherwise all modes
    within ``rel_window * k``.
    """
    kmax = k * (1 + (rel_window or 0)) if count is None else None
    cands = []
    mmax = int(2 * L_O * (k if kmax is None else kmax) / math.pi) + 2 + (count or 0)
    nmax = int(l_O * (k if kmax is None else kmax) / math.pi) + 2 + (count or 0)
    for m in range(mmax + 1):
        for n in range(nmax + 1):
            cands.append((abs(quasimode_wavenumber(m, n, L_O, l_O) - k), m, n))
    cands.sort()
    if count is not None:
        return [(m, n) for _, m, n in cands[:count]]
    return [(m, n) for d, m, n in cands if d <= rel_window * k]


def quasimode_vector(m: int, n: int, g: GeometryParams, coords: np.ndarray) -> np.ndarray:
    """Nodal interpolant of the closed-cavity mode inside the cavity, zero outside."""
    if not g.cavity:
        raise GeometryError("geometry has no cavity")
    x0, x1, y0, y1 = g.cavity_box()
    eps = 1e-10 * max(g.L_O, g.l_O)
    x, y = coords[:, 0], coords[:, 1]
    inside = (x >= x0 - eps) & (x <= x1 + eps) & (y >= y0 - eps) & (y <= y1 + eps)
    xi = np.clip(x - x0, 0, None)
    eta = y - y0
    z = np.where(inside, np.sin((m + 0.5) * math.pi * xi / g.L_O) * np.cos(n * math.pi * eta / g.l_O), 0.0)
    nrm = np.linalg.norm(z)
    if nrm == 0:
        raise GeometryError("no dofs inside the cavity")
    return (z / nrm).astype(complex)


# -- DtN coarse space ---------------------------------------------------------

def _interface_dofs(system: AssembledSystem, dec: Decomposition, s: int) -> np.ndarray:
    loc = local_index(dec, s)
    d = np.concatenate([system.dofmap.edge_dofs(e) for e in dec[s].interface_edges]) \
        if len(dec[s].interface_edges) else np.zeros(0, dtype=np.int64)
    d = d[d >= 0]
    return np.unique(loc[d])


DTN_SELECTIONS = ("abs-real", "real", "modulus")


def _dtn_order(lam: np.ndarray, selection: str) -> np.ndarray:
    if selection == "abs-real":
        return np.lexsort((np.abs(lam), np.abs(lam.real)))
    if selection == "real":
        return np.lexsort((np.abs(lam), lam.real))
    if selection == "modulus":
        return np.lexsort((lam.real, np.abs(lam)))
    raise ValueError(f"unknown DtN selection {selection!r}")


def dtn_local_modes(An: sp.csr_matrix, Mg: sp.csr_matrix, gamma: np.ndarray, count: int,
                    selection: str = "abs-real"):
    """Eigenvectors of DtN v = lambda M_Gamma v lifted by harmonic extension.

    Returns (eigenvalues, local vectors) for the first ``count`` eigenpairs in
    the order given by ``selection``: smallest |Re lambda| ("abs-real"),
    smallest Re lambda ("real") or smallest |lambda| ("modulus").
    """
    n = An.shape[0]
    inner = np.setdiff1d(np.arange(n), gamma)
    A_II = An[inner][:, inner]
    A_IG = An[inner][:, gamma].toarray()
    A_GI = An[gamma][:, inner].toarray()
    A_GG = An[gamma][:, gamma].toarray()
    fact = sparse_lu_factor(A_II)
    X = fact.solve(A_IG)
    schur = A_GG - A_GI @ X
    if not np.all(np.isfinite(schur)):
        raise SingularMatrix("local Dirichlet problem is singular")
    M = Mg[gamma][:, gamma].toarray()
    lam, V = scipy.linalg.eig(schur, M)
    order = _dtn_order(lam, selection)[:count]
    vecs = np.zeros((n, len(order)), dtype=complex)
    vecs[gamma] = V[:, order]
    vecs[inner] = -X @ V[:, order]
    return lam[order], vecs


def build_dtn_coarse_space(system: AssembledSystem, dec: Decomposition, n_per_subdomain: int,
                           selection: str = "abs-real") -> np.ndarray:
    """Column block of DtN coarse vectors, ``n_per_subdomain`` per subdomain with an interface."""
    if n_per_subdomain < 1:
        raise ValueError("n_per_subdomain must be >= 1")
    if selection not in DTN_SELECTIONS:
        raise ValueError(f"unknown DtN selection {selection!r}")
    cols = []
    for s, sub in enumerate(dec):
        gamma = _interface_dofs(system, dec, s)
        if len(gamma) == 0:
            continue
        An, Mg = local_matrices(system, dec, s)
        try:
            _, V = dtn_local_modes(An, Mg, gamma, n_per_subdomain, selection)
        except SingularMatrix:
            g2 = system.geometry.replace(k=system.geometry.k * (1 + 1e-8))
            log.warning("subdomain %d: singular local Dirichlet problem, retrying with shifted k", s)
            Ae, _ = assemble_operator(system.mesh, system.dofmap, g2.k, g2)
            An, Mg = local_matrices(system, dec, s, elem_mats=Ae)
            _, V = dtn_local_modes(An, Mg, gamma, n_per_subdomain, selection)
        V = V * sub.weights[:, None]
        block = np.zeros((dec.n, V.shape[1]), dtype=complex)
        block[sub.dofs] = V / np.linalg.norm(V, axis=0)
        cols.append(block)
    if not cols:
        return np.zeros((dec.n, 0), dtype=complex)
    return np.hstack(cols)


# -- deflation ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DeflationBasis:
    """Matrix-free Q = Z E^{-1} Z^*, E = Z^* A Z.

    Internally Z is replaced by an orthonormal basis of its range, which
    leaves Q (and hence every projector) unchanged.
    """

    Z: np.ndarray
    labels: tuple[str, ...]
    W: np.ndarray = field(repr=False)     # orthonormal basis of range(Z)
    AW: np.ndarray = field(repr=False)
    E_lu: tuple = field(repr=False)
    E_cond: float = 1.0

    @property
    def size(self) -> int:
        return self.Z.shape[1]

    @property
    def n_cs(self) -> int:
        return sum(lab == LABEL_CS for lab in self.labels)

    @property
    def n_def(self) -> int:
        return sum(lab == LABEL_DEF for lab in self.labels)

    def coarse_solve(self, v):
        """E^{-1} W^* v."""
        if self.size == 0:
            return np.zeros((0,) + np.shape(v)[1:], dtype=complex)
        return scipy.linalg.lu_solve(self.E_lu, self.W.conj().T @ v)

    def apply_Q(self, v):
        if self.size == 0:
            return np.zeros_like(v, dtype=complex)
        return self.W @ self.coarse_solve(v)

    def apply_P_def(self, v):
        if self.size == 0:
            return np.asarray(v, dtype=complex)
        return v - self.AW @ self.coarse_solve(v)

    def apply_Q_def(self, A, v):
        return v - self.apply_Q(A @ v)


def build_deflation(A, Z: np.ndarray, labels=None, rank_tol: float = 1e-10,
                    cond_max: float = 1e14) -> DeflationBasis:
    Z = np.asarray(Z, dtype=complex)
    if Z.ndim != 2 or Z.shape[0] != A.shape[0]:
        raise ValueError("Z must be an N x n block")
    labels = tuple(labels) if labels is not None else (LABEL_DEF,) * Z.shape[1]
    if len(labels) != Z.shape[1]:
        raise ValueError("one label per column required")
    n = Z.shape[1]
    if n == 0:
        empty = np.zeros((Z.shape[0], 0), dtype=complex)
        return DeflationBasis(Z, labels, empty, empty, None, 1.0)
    W, R = np.linalg.qr(Z)
    d = np.abs(np.diag(R))
    if d.min() <= rank_tol * d.max():
        raise DeflationSetupError(f"Z is rank deficient (|R_ii| min/max = {d.min() / d.max():.2e})")
    AW = np.asarray(A @ W)
    E = W.conj().T @ AW
    cond = np.linalg.cond(E)
    if not np.isfinite(cond) or cond > cond_max:
        raise DeflationSetupError(f"E = Z*AZ is singular to working precision (cond={cond:.2e})")
    return DeflationBasis(Z, labels, W, AW, scipy.linalg.lu_factor(E), float(cond))


def second_condition_margin(basis: DeflationBasis, apply_minv) -> float:
    """Smallest singular value of W^* M^{-1} W relative to the largest.

    A zero would signal that ker(Z^*) meets the image of Z under the
    preconditioner; reported only.
    """
    if basis.size == 0:
        return 1.0
    s = np.linalg.svd(basis.W.conj().T @ apply_minv(basis.W), compute_uv=False)
    return float(s[-1] / s[0])


@dataclass(eq=False)
class PreconditionerChain:
    """Right preconditioner P for the operator A P."""

    variant: str = "none"
    dec: Decomposition | None = None
    locals_: list[LocalProblem] | None = None
    basis: DeflationBasis | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown preconditioner variant {self.variant!r}")
        if self.variant != "none" and (self.dec is None or self.locals_ is None):
            raise ValueError(f"variant {self.variant} needs a decomposition and local problems")
        if self.variant == "oras+adef" and self.basis is None:
            raise ValueError("oras+adef needs a deflation basis")

    def oras(self, v):
        return apply_oras(self.dec, self.locals_, v)

    def __call__(self, v):
        if self.variant == "none":
            return np.asarray(v, dtype=complex)
        if self.variant == "oras":
            return self.oras(v)
        return apply_P_adef(self, v)


def apply_P_adef(chain: PreconditionerChain, v):
    """M_oras^{-1} P_def v + Q v."""
    basis = chain.basis
    y = basis.coarse_solve(v)
    if basis.size == 0:
        return chain.oras(v)
    return chain.oras(v - basis.AW @ y) + basis.W @ y


def write_basis(prefix, basis: DeflationBasis) -> None:
    write_matrix_market(f"{prefix}_Z.mtx", basis.Z, comment="quasidd deflation basis")
    with open(f"{prefix}_Z_labels.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["column", "label"])
        for i, lab in enumerate(basis.labels):
            w.writerow([i, lab])

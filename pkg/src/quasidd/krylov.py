"""Full (unrestarted) right-preconditioned GMRES with harmonic Ritz instrumentation."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .linalg import LinAlgError, hessenberg_eigenvalues

REORTH_RATIO = 0.7
BREAKDOWN_TOL = 1e-14


class HRUndefined(LinAlgError):
    pass


@dataclass
class GmresConfig:
    tol: float = 1e-6
    maxiter: int = 500
    record_hr: bool = True
    hr_every: int = 1
    x0: np.ndarray | None = None

    def __post_init__(self):
        if not 0 < self.tol < 1:
            raise ValueError("tol must lie in (0, 1)")
        if self.maxiter < 1:
            raise ValueError("maxiter must be >= 1")
        if self.hr_every < 1:
            raise ValueError("hr_every must be >= 1")


@dataclass
class GmresTrace:
    residual_norms: np.ndarray          # ||r_l|| / ||r_0||, l = 0..basis_dim
    hr_values: dict[int, np.ndarray]    # l -> harmonic Ritz values at iteration l
    hessenberg: np.ndarray              # (basis_dim + 1, basis_dim)
    basis_dim: int
    converged: bool
    solution: np.ndarray
    true_residual: float
    r0_norm: float
    breakdown: bool = False
    hr_skipped: list[int] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return self.basis_dim


def as_operator(A):
    if A is None:
        return lambda v: np.asarray(v, dtype=complex)
    if callable(A) and not hasattr(A, "shape"):
        return A
    if hasattr(A, "matvec"):
        return A.matvec
    return lambda v: A @ v


def harmonic_ritz(Hbar: np.ndarray) -> np.ndarray:
    """Harmonic Ritz values from an extended (l+1) x l Hessenberg matrix.

    Eigenvalues of H_l + h_{l+1,l}^2 f e_l^T with H_l^* f = e_l, i.e. the roots
    of the GMRES residual polynomial at step l.
    """
    Hbar = np.asarray(Hbar, dtype=complex)
    l = Hbar.shape[1]
    if Hbar.shape[0] != l + 1:
        raise ValueError("expected an (l+1) x l Hessenberg matrix")
    H = Hbar[:l, :l].copy()
    h = Hbar[l, l - 1]
    if not np.all(np.isfinite(H)):
        raise HRUndefined("non-finite Hessenberg entries")
    sv = np.linalg.svd(H, compute_uv=False)
    if sv[-1] <= 1e-14 * max(sv[0], 1e-300):
        raise HRUndefined(f"H_{l} is singular")
    e = np.zeros(l, dtype=complex)
    e[-1] = 1.0
    f = scipy.linalg.solve(H.conj().T, e)
    H[:, -1] += abs(h) ** 2 * f
    return hessenberg_eigenvalues(H)


def gmres(A, b, cfg: GmresConfig | None = None, M=None) -> GmresTrace:
    """Solve A x = b through A M u = b, x = x0 + M u (M defaults to identity)."""
    cfg = cfg or GmresConfig()
    apply_A, apply_M = as_operator(A), as_operator(M)
    b = np.asarray(b, dtype=complex)
    n = b.shape[0]
    x0 = np.zeros(n, dtype=complex) if cfg.x0 is None else np.asarray(cfg.x0, dtype=complex)
    r0 = b - apply_A(x0) if cfg.x0 is not None else b.copy()
    beta = np.linalg.norm(r0)
    if beta == 0:
        raise ValueError("initial residual is zero")
    m = min(cfg.maxiter, n)
    V = np.zeros((n, m + 1), dtype=complex)
    H = np.zeros((m + 1, m), dtype=complex)
    cs = np.zeros(m, dtype=complex)
    sn = np.zeros(m, dtype=complex)
    g = np.zeros(m + 1, dtype=complex)
    g[0] = beta
    V[:, 0] = r0 / beta
    res = [1.0]
    hr, skipped = {}, []
    scale = 0.0
    converged = breakdown = False
    l = 0
    for j in range(m):
        w = apply_A(apply_M(V[:, j]))
        before = np.linalg.norm(w)
        scale = max(scale, before)
        for i in range(j + 1):
            hij = np.vdot(V[:, i], w)
            H[i, j] += hij
            w -= hij * V[:, i]
        after = np.linalg.norm(w)
        if after < REORTH_RATIO * before:
            for i in range(j + 1):
                hij = np.vdot(V[:, i], w)
                H[i, j] += hij
                w -= hij * V[:, i]
            after = np.linalg.norm(w)
        H[j + 1, j] = after
        l = j + 1
        breakdown = after <= BREAKDOWN_TOL * scale
        if not breakdown:
            V[:, j + 1] = w / after

        if cfg.record_hr and (l % cfg.hr_every == 0 or breakdown):
            try:
                hr[l] = harmonic_ritz(H[:l + 1, :l])
            except LinAlgError:
                skipped.append(l)

        # Givens update of the least squares problem
        col = H[:j + 2, j].copy()
        for i in range(j):
            t = cs[i] * col[i] + sn[i] * col[i + 1]
            col[i + 1] = -np.conj(sn[i]) * col[i] + np.conj(cs[i]) * col[i + 1]
            col[i] = t
        a, c = col[j], col[j + 1]
        r = np.hypot(abs(a), abs(c))
        if r == 0:
            cs[j], sn[j] = 1.0, 0.0
        else:
            phase = a / abs(a) if a != 0 else 1.0
            cs[j] = abs(a) / r
            sn[j] = phase * np.conj(c) / r
        # store rotated column in place of H's triangular factor
        col[j] = cs[j] * a + sn[j] * c
        col[j + 1] = 0.0
        if j == 0:
            R = np.zeros((m, m), dtype=complex)
        R[:j + 1, j] = col[:j + 1]
        g[j + 1] = -np.conj(sn[j]) * g[j]
        g[j] = cs[j] * g[j]
        rel = abs(g[j + 1]) / beta
        if breakdown:
            rel = 0.0
        res.append(rel)
        if rel <= cfg.tol or breakdown:
            converged = True
            break

    y = scipy.linalg.solve_triangular(R[:l, :l], g[:l]) if l else np.zeros(0)
    x = x0 + apply_M(V[:, :l] @ y)
    true_res = np.linalg.norm(b - apply_A(x)) / np.linalg.norm(b)
    return GmresTrace(
        residual_norms=np.asarray(res), hr_values=hr, hessenberg=H[:l + 1, :l].copy(),
        basis_dim=l, converged=converged, solution=x, true_residual=float(true_res),
        r0_norm=float(beta), breakdown=breakdown, hr_skipped=skipped,
    )


def write_trace(prefix, trace: GmresTrace) -> tuple[str, str]:
    res_path, hr_path = f"{prefix}_residuals.csv", f"{prefix}_hr.csv"
    with open(res_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "relative_residual"])
        for i, r in enumerate(trace.residual_norms):
            w.writerow([i, f"{r:.17g}"])
    with open(hr_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "hr_index", "re", "im"])
        for l in sorted(trace.hr_values):
            vals = trace.hr_values[l]
            order = np.lexsort((vals.imag, vals.real))
            for i, v in enumerate(vals[order]):
                w.writerow([l, i, f"{v.real:.17g}", f"{v.imag:.17g}"])
    return res_path, hr_path

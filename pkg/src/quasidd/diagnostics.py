"""Spectra, residual bounds from harmonic Ritz values, plateaus and HR trajectories."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .krylov import GmresTrace
from .linalg import RankDeficient, dense_eig, least_squares_solve
from .partition import Decomposition, LocalProblem

DENSE_CAP = 4000


class SizeError(ValueError):
    pass


class PoleError(ZeroDivisionError):
    pass


class BoundUnavailable(RuntimeError):
    pass


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray
    kappa: np.ndarray
    label: str = ""
    diagonalizable: bool = True

    def smallest(self, count: int) -> np.ndarray:
        return self.eigenvalues[np.argsort(np.abs(self.eigenvalues), kind="stable")[:count]]


def materialize(op, n: int, block: int = 512) -> np.ndarray:
    """Dense matrix of a linear operator, built from blocks of unit vectors."""
    out = np.empty((n, n), dtype=complex)
    for start in range(0, n, block):
        stop = min(n, start + block)
        E = np.zeros((n, stop - start), dtype=complex)
        E[np.arange(start, stop), np.arange(stop - start)] = 1.0
        out[:, start:stop] = op(E)
    return out


def preconditioned_spectrum(op, n: int | None = None, label: str = "",
                            cap: int = DENSE_CAP) -> SpectrumReport:
    """Dense eigen-analysis of ``op``, either an array or a callable on column blocks."""
    if callable(op) and not hasattr(op, "shape"):
        if n is None:
            raise ValueError("size required for a callable operator")
        if n > cap:
            raise SizeError(f"N={n} exceeds the dense cap {cap}; use a coarser mesh")
        T = materialize(op, n)
    else:
        T = op.toarray() if sp.issparse(op) else np.asarray(op, dtype=complex)
        if T.shape[0] > cap:
            raise SizeError(f"N={T.shape[0]} exceeds the dense cap {cap}; use a coarser mesh")
    dec = dense_eig(T)
    order = np.lexsort((dec.eigenvalues.imag, dec.eigenvalues.real, np.abs(dec.eigenvalues)))
    return SpectrumReport(dec.eigenvalues[order], dec.kappa[order], label, dec.well_conditioned)


def oras_near_spectrum(A, dec: Decomposition, locals_: list[LocalProblem], count: int = 6,
                       sigma: complex = 0.0, seed: int = 0) -> np.ndarray:
    """Eigenvalues of A M_oras^{-1} closest to ``sigma`` without forming the operator.

    With R the stacked restrictions, D and B the block diagonal weights and
    local matrices, A M^{-1} = A R^T D B^{-1} R, so (A M^{-1} - sigma I) x = y
    is the first block of the sparse system
        [[-sigma I, A R^T D], [-R, B]] [x; w] = [y; 0],
    which is factorized once for shift-invert Arnoldi.
    """
    n = dec.n
    sizes = dec.sizes
    offs = np.concatenate([[0], np.cumsum(sizes)])
    rows = np.concatenate([np.arange(offs[s], offs[s + 1]) for s in range(dec.S)])
    cols = np.concatenate([sub.dofs for sub in dec])
    wts = np.concatenate([sub.weights for sub in dec])
    m = offs[-1]
    R = sp.csr_matrix((np.ones(m), (rows, cols)), shape=(m, n))
    RtD = sp.csr_matrix((wts, (cols, rows)), shape=(n, m))
    B = sp.block_diag([lp.B for lp in locals_], format="csr")
    K = sp.bmat([[-sigma * sp.identity(n), A @ RtD], [-R, B]], format="csc")
    lu = spla.splu(K.astype(complex))

    def inv(y):
        return lu.solve(np.concatenate([y, np.zeros(m, dtype=complex)]))[:n]

    def matvec(x):
        w = np.concatenate([lp.solve(x[sub.dofs]) for sub, lp in zip(dec, locals_)])
        return A @ (RtD @ w)

    T = spla.LinearOperator((n, n), matvec=matvec, dtype=complex)
    OPinv = spla.LinearOperator((n, n), matvec=inv, dtype=complex)
    v0 = np.random.default_rng(seed).standard_normal(n) + 0j
    vals = spla.eigs(T, k=count, sigma=sigma, OPinv=OPinv, v0=v0, return_eigenvectors=False)
    return vals[np.argsort(np.abs(vals - sigma), kind="stable")]


def evaluate_s_factor(lam_J, nu_J, lam_c) -> float:
    """max over lam_c of |prod(1 - z/lam_J) / prod(1 - z/nu_J)|."""
    lam_J, nu_J, lam_c = (np.atleast_1d(np.asarray(a, dtype=complex)) for a in (lam_J, nu_J, lam_c))
    if len(lam_J) != len(nu_J):
        raise ValueError("Lambda_J and N_J must have the same size")
    if np.any(lam_J == 0) or np.any(nu_J == 0):
        raise ValueError("zero eigenvalue or harmonic Ritz value")
    if len(lam_c) == 0:
        return 0.0
    best = 0.0
    for z in lam_c:
        den = np.prod(1 - z / nu_J)
        if den == 0:
            raise PoleError(f"evaluation point {z} coincides with a harmonic Ritz value")
        best = max(best, abs(np.prod(1 - z / lam_J) / den))
    return float(best)


@dataclass
class MinimaxResult:
    coefficients: np.ndarray   # monomial coefficients c_0 = 1, c_1, ..., c_m
    value: float               # max |q(z_i)| achieved
    iterations: int = 0

    def __call__(self, z):
        return np.polynomial.polynomial.polyval(z, self.coefficients)


def _unique_points(points, rtol=1e-12):
    pts = []
    scale = max(np.abs(points).max(), 1e-300)
    for z in points:
        if all(abs(z - w) > rtol * scale for w in pts):
            pts.append(z)
    return np.array(pts, dtype=complex)


def minimax_polynomial(points, m: int, maxiter: int = 200, stall: float = 1e-10) -> MinimaxResult:
    """Approximate min over q(0)=1, deg q <= m of max_i |q(z_i)| by Lawson's IRLS.

    The returned value is attained by the returned polynomial, so it never
    underestimates the true minimum.
    """
    z = _unique_points(np.atleast_1d(np.asarray(points, dtype=complex)))
    if m < 1:
        raise ValueError("degree must be >= 1")
    if len(z) == 0:
        raise ValueError("need at least one point")
    if np.any(z == 0):
        raise ValueError("points must exclude the origin")
    if m >= len(z):
        coeffs = np.array([1.0 + 0j])
        for zi in z:
            coeffs = np.polynomial.polynomial.polymul(coeffs, [1.0, -1.0 / zi])
        return MinimaxResult(coeffs, 0.0, 0)

    # basis z * phi_j(z), phi_j orthonormal on the points (Vandermonde with Arnoldi);
    # monomial coefficients of each phi_j are carried along
    npts = len(z)
    Phi = np.zeros((npts, m), dtype=complex)
    C = np.zeros((m, m + 1), dtype=complex)  # C[j] = coefficients of z*phi_j
    phi = np.ones(npts, dtype=complex) / math.sqrt(npts)
    pc = np.zeros(m + 1, dtype=complex)
    pc[0] = 1 / math.sqrt(npts)
    basis_c = [pc]
    Phi[:, 0] = phi
    for j in range(1, m):
        w = z * Phi[:, j - 1]
        wc = np.roll(basis_c[j - 1], 1)
        for i in range(j):
            h = np.vdot(Phi[:, i], w)
            w = w - h * Phi[:, i]
            wc = wc - h * basis_c[i]
        hn = np.linalg.norm(w)
        Phi[:, j] = w / hn
        basis_c.append(wc / hn)
    for j in range(m):
        C[j] = np.roll(basis_c[j], 1)
    G = z[:, None] * Phi

    wts = np.full(npts, 1.0 / npts)
    best_val, best_a = math.inf, None
    it = 0
    for it in range(1, maxiter + 1):
        sw = np.sqrt(wts)
        try:
            a = least_squares_solve(sw[:, None] * G, -sw.astype(complex))
        except RankDeficient:
            a = np.linalg.lstsq(sw[:, None] * G, -sw.astype(complex), rcond=None)[0]
        q = 1 + G @ a
        val = np.abs(q).max()
        if val < best_val:
            best_val, best_a = val, a
        new = wts * np.abs(q)
        total = new.sum()
        if total == 0:
            break
        new /= total
        if np.abs(new - wts).max() < stall:
            wts = new
            break
        wts = new
    coeffs = C.T @ best_a
    coeffs[0] += 1
    return MinimaxResult(coeffs, float(best_val), it)


def greedy_match(targets, candidates) -> list[tuple[int, int]]:
    """One-to-one nearest pairs (target index, candidate index), closest first."""
    targets = np.asarray(targets)
    candidates = np.asarray(candidates)
    if len(targets) == 0 or len(candidates) == 0:
        return []
    d = np.abs(targets[:, None] - candidates[None, :])
    order = np.argsort(d, axis=None, kind="stable")
    used_t, used_c, pairs = set(), set(), []
    for flat in order:
        t, c = divmod(int(flat), len(candidates))
        if t in used_t or c in used_c:
            continue
        pairs.append((t, c))
        used_t.add(t)
        used_c.add(c)
        if len(pairs) == min(len(targets), len(candidates)):
            break
    return pairs


@dataclass
class BoundReport:
    l: int
    m: int
    J: int
    lambda_J: np.ndarray
    nu_J: np.ndarray
    factor1: float
    factor2: float
    factor3: float
    observed: float

    @property
    def bound(self) -> float:
        return self.factor1 * self.factor2 * self.factor3

    @property
    def holds(self) -> bool:
        return self.observed <= self.bound + 1e-8


def evaluate_theorem_bound(trace: GmresTrace, spectrum: SpectrumReport, J: int, l: int, m: int,
                           selection: str = "smallest-modulus") -> BoundReport:
    """Local residual bound ||r_{l+m}|| / ||r_l|| from the HR values at iteration l."""
    lam = spectrum.eigenvalues
    if m < 1 or l < 1:
        raise ValueError("need l >= 1 and m >= 1")
    if l + m > trace.basis_dim or l + m >= len(lam):
        raise ValueError(f"l + m = {l + m} is beyond the run (basis {trace.basis_dim}, N {len(lam)})")
    if not 0 <= J <= l:
        raise ValueError("J must lie in [0, l]")
    if l not in trace.hr_values:
        raise BoundUnavailable(f"no harmonic Ritz values recorded at l={l}")
    nu = trace.hr_values[l]
    if selection == "smallest-modulus":
        lam_idx = np.argsort(np.abs(lam), kind="stable")[:J]
        pairs = greedy_match(lam[lam_idx], nu)
        lam_sel = lam_idx[[t for t, _ in pairs]]
        nu_sel = np.array([c for _, c in pairs], dtype=int)
    elif selection == "closest":
        pairs = greedy_match(lam, nu)[:J]
        lam_sel = np.array([t for t, _ in pairs], dtype=int)
        nu_sel = np.array([c for _, c in pairs], dtype=int)
    else:
        raise ValueError(f"unknown selection {selection!r}")
    mask = np.ones(len(lam), bool)
    mask[lam_sel] = False
    lam_c = lam[mask]
    f1 = float(spectrum.kappa[mask].sum())
    f2 = evaluate_s_factor(lam[lam_sel], nu[nu_sel], lam_c) if J > 0 else 1.0
    f3 = minimax_polynomial(lam_c, m).value
    r = trace.residual_norms
    observed = float(r[l + m] / r[l]) if r[l] > 0 else 0.0
    return BoundReport(l, m, J, lam[lam_sel], nu[nu_sel], f1, f2, f3, observed)


def detect_plateaus(residual_norms, window: int = 10, rate_threshold: float = 0.99) -> list[tuple[int, int]]:
    """Maximal iteration ranges (start, end) over which every step reduces the
    residual by a factor above ``rate_threshold``, at least ``window`` steps long."""
    if window < 2:
        raise ValueError("window must be >= 2")
    r = np.asarray(residual_norms, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(r[:-1] > 0, r[1:] / r[:-1], 0.0)
    flat = rho > rate_threshold
    out, start = [], None
    for i, f in enumerate(np.append(flat, False)):
        if f and start is None:
            start = i
        elif not f and start is not None:
            if i - start >= window:
                out.append((start, i))  # steps start+1 .. i
            start = None
    return out


def match_hr_trajectories(trace: GmresTrace, targets) -> dict[int, np.ndarray]:
    """For each recorded iteration, min_j |nu_j - target| for every target."""
    targets = np.atleast_1d(np.asarray(targets, dtype=complex))
    return {l: np.abs(trace.hr_values[l][:, None] - targets[None, :]).min(axis=0)
            for l in sorted(trace.hr_values)}


# -- CSV ----------------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_spectrum_csv(path, report: SpectrumReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["re", "im", "kappa"])
        for lam, kap in zip(report.eigenvalues, report.kappa):
            w.writerow([_fmt(lam.real), _fmt(lam.imag), _fmt(kap)])


def write_bounds_csv(path, reports: list[BoundReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["l", "m", "J", "factor1", "factor2", "factor3", "bound", "observed"])
        for r in reports:
            w.writerow([r.l, r.m, r.J, _fmt(r.factor1), _fmt(r.factor2), _fmt(r.factor3),
                        _fmt(r.bound), _fmt(r.observed)])


def write_plateaus_csv(path, ranges: list[tuple[int, int]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["start", "end"])
        w.writerows(ranges)


def write_trajectories_csv(path, distances: dict[int, np.ndarray], targets) -> None:
    targets = np.atleast_1d(np.asarray(targets, dtype=complex))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "target", "target_re", "target_im", "distance"])
        for l, d in distances.items():
            for i, (t, di) in enumerate(zip(targets, d)):
                w.writerow([l, i, _fmt(t.real), _fmt(t.imag), _fmt(di)])

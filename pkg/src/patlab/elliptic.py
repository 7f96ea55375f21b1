"""Discrete divergence-form operator, Dirichlet solves and volume potentials.

The operator ``A u = -div(a grad u)`` is assembled as a sparse matrix over
all cells of the grid.  Diagonal tensor entries use two-point fluxes with
the harmonic mean of ``a_ii`` on each face; off-diagonal entries use the
product of centred differences, ``D_i^T a_ij D_j``, which keeps the matrix
exactly symmetric.  Cells outside the active set are Dirichlet zero; a
curved wall ``|x| = R`` is handled by shortening the boundary flux arm to
the wall crossing (symmetric, second order).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy import integrate

from .grid import GridSpec
from .medium import MediumSpec

THETA_MIN = 0.1


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (relative residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


def _wall_fraction(p: np.ndarray, q: np.ndarray, radius: float) -> np.ndarray:
    """Fraction ``t`` in (0, 1] with ``|p + t (q - p)| = radius`` (p inside, q outside)."""
    d = q - p
    a = np.sum(d * d, axis=-1)
    b = 2 * np.sum(p * d, axis=-1)
    c = np.sum(p * p, axis=-1) - radius**2
    t = (-b + np.sqrt(np.maximum(b * b - 4 * a * c, 0.0))) / (2 * a)
    return np.clip(t, THETA_MIN, 1.0)


def _assemble_radial(g: GridSpec, active: np.ndarray, wall: float | None) -> sp.csr_matrix:
    n = g.size
    r, h = g.axis, g.h
    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    # the origin node carries no weight (v = r u vanishes there) and is decoupled
    j = np.arange(1, n)
    diag[1:] = 2 / h**2
    up = j[j + 1 < n]
    ok = active[up] & active[up + 1]
    rows += list(up[ok]); cols += list(up[ok] + 1)
    vals += list(-r[up[ok] + 1] / (h**2 * r[up[ok]]))
    dn = j[j - 1 >= 1]
    ok = active[dn] & active[dn - 1]
    rows += list(dn[ok]); cols += list(dn[ok] - 1)
    vals += list(-r[dn[ok] - 1] / (h**2 * r[dn[ok]]))
    if wall is not None:
        last = np.nonzero(active)[0].max()
        theta = np.clip((wall - r[last]) / h, THETA_MIN, 1.0)
        diag[last] = (1 + 1 / theta) / h**2
    diag[~active] = 0
    diag[0] = 0
    rows += list(range(n)); cols += list(range(n)); vals += list(diag)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def assemble(m: MediumSpec, active: np.ndarray | None = None, wall: float | None = None) -> sp.csr_matrix:
    """Sparse matrix of ``A`` over all cells; rows/columns of inactive cells are zero.

    ``wall`` marks the active set as the ball of that radius and switches on
    the curved-boundary flux correction.
    """
    g = m.grid
    if active is None:
        active = np.ones(g.shape, bool) if wall is None else g.ball(wall)
    if g.dim == 1:
        if not m.identity_a:
            raise ValueError("the radial reduction requires a = identity")
        return _assemble_radial(g, active, wall)

    n, h = g.size, g.h
    idx = np.arange(n).reshape(g.shape)
    da = m.diag_a
    diag = np.zeros(g.shape)
    rows, cols, vals = [], [], []
    pos = np.stack(g.coords, axis=-1)
    for ax in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[ax], hi[ax] = slice(0, -1), slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        ap, aq = da[ax][lo], da[ax][hi]
        k = 2 * ap * aq / (ap + aq) / h**2
        act_p, act_q = active[lo], active[hi]
        both = act_p & act_q
        rows += [idx[lo][both], idx[hi][both]]
        cols += [idx[hi][both], idx[lo][both]]
        vals += [-k[both], -k[both]]
        d_lo = np.where(both, k, 0.0)
        d_hi = np.where(both, k, 0.0)
        for src, dst, sel_from, sel_to, acc in ((lo, hi, act_p, act_q, d_lo), (hi, lo, act_q, act_p, d_hi)):
            one = sel_from & ~sel_to
            if not one.any():
                continue
            if wall is None:
                theta = np.ones(one.sum())
            else:
                theta = _wall_fraction(pos[src][one], pos[dst][one], wall)
            acc[one] += k[one] / theta
        diag[lo] += d_lo
        diag[hi] += d_hi
        # grid edge: ghost cell held at zero
        for edge in (0, -1):
            e = [slice(None)] * 3
            e[ax] = edge
            e = tuple(e)
            diag[e] += np.where(active[e], da[ax][e] / h**2, 0.0)

    if m.has_offdiag:
        a = m.a
        inner = np.zeros(g.shape, bool)
        inner[1:-1, 1:-1, 1:-1] = True
        for i in range(3):
            for j in range(3):
                if i == j:
                    continue
                aij = a[..., i, j]
                sel = inner & (aij != 0)
                if not sel.any():
                    continue
                xs = np.nonzero(sel)
                w = aij[sel] / (4 * h**2)
                for si in (1, -1):
                    for sj in (1, -1):
                        p = list(xs); q = list(xs)
                        p[i] = p[i] + si
                        q[j] = q[j] + sj
                        ok = active[tuple(p)] & active[tuple(q)]
                        rows.append(idx[tuple(p)][ok])
                        cols.append(idx[tuple(q)][ok])
                        vals.append(si * sj * w[ok])

    diag[~active] = 0
    rows.append(idx.ravel()); cols.append(idx.ravel()); vals.append(diag.ravel())
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    A.sum_duplicates()
    return A


@lru_cache(maxsize=16)
def operator(m: MediumSpec, wall: float | None = None) -> sp.csr_matrix:
    """Cached full-grid operator (open grid, or the ball of radius ``wall``)."""
    return assemble(m, wall=wall)


def spectral_bound(m: MediumSpec, wall: float | None = None) -> float:
    """Gershgorin bound on the largest eigenvalue of ``c^2 A``."""
    A = operator(m, wall)
    rowsum = np.asarray(abs(A).sum(axis=1)).ravel()
    return float(np.max(rowsum * m.c.ravel() ** 2))


def apply_A(u: np.ndarray, m: MediumSpec) -> np.ndarray:
    """``A u`` on interior cells of the grid (zero on the outermost layer)."""
    g = m.grid
    out = (operator(m) @ u.ravel()).reshape(g.shape)
    out[~g.interior(np.ones(g.shape, bool), diagonal=m.has_offdiag)] = 0
    return out


def pcg(A, b: np.ndarray, x0: np.ndarray | None = None, tol: float = 1e-10,
        maxiter: int | None = None) -> tuple[np.ndarray, int, float]:
    """Jacobi-preconditioned conjugate gradients for SPD ``A``.

    Returns ``(x, iterations, relative_residual)``; raises ConvergenceError.
    """
    n = b.shape[0]
    maxiter = maxiter or 10 * n
    dinv = 1.0 / A.diagonal()
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - A @ x
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros_like(b), 0, 0.0
    z = dinv * r
    p = z.copy()
    rz = r @ z
    res = np.linalg.norm(r) / bnorm
    it = 0
    while res > tol:
        if it >= maxiter:
            raise ConvergenceError("CG did not converge", res, it)
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        res = np.linalg.norm(r) / bnorm
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
    return x, it, res


@dataclass
class EllipticProblem:
    medium: MediumSpec
    domain_mask: np.ndarray
    rhs: np.ndarray
    boundary_values: np.ndarray


def solve_dirichlet(p: EllipticProblem, tol: float = 1e-10, maxiter: int | None = None) -> np.ndarray:
    """Solve ``A u = rhs`` on the interior of the mask, ``u = boundary_values`` on its boundary.

    Cells outside the mask are returned as zero.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    m = p.medium
    g = m.grid
    interior = g.interior(p.domain_mask, diagonal=m.has_offdiag)
    bnd = p.domain_mask & ~interior
    I = np.flatnonzero(interior)
    B = np.flatnonzero(bnd)
    A = operator(m)
    w = g.volumes.ravel()
    A_I = A[I]
    lhs = sp.diags(w[I]) @ A_I[:, I]
    ub = p.boundary_values.ravel()[B]
    rhs = w[I] * (p.rhs.ravel()[I] - A_I[:, B] @ ub)
    x, _, _ = pcg(lhs.tocsr(), rhs, tol=tol, maxiter=maxiter)
    u = np.zeros(g.size)
    u[I] = x
    u[B] = ub
    return u.reshape(g.shape)


# name -> callable(x, y, z); all harmonic, exact for the 7-point stencil (degree <= 3)
POLY_HARMONICS: dict[str, callable] = {
    "1": lambda x, y, z: np.ones_like(x),
    "x1": lambda x, y, z: x,
    "x2": lambda x, y, z: y,
    "x3": lambda x, y, z: z,
    "x1x2": lambda x, y, z: x * y,
    "x1x3": lambda x, y, z: x * z,
    "x2x3": lambda x, y, z: y * z,
    "x1^2-x2^2": lambda x, y, z: x * x - y * y,
    "x1^2-x3^2": lambda x, y, z: x * x - z * z,
    "x1x2x3": lambda x, y, z: x * y * z,
    "x1^3-3x1x2^2": lambda x, y, z: x**3 - 3 * x * y * y,
    "3x1^2x2-x2^3": lambda x, y, z: 3 * x * x * y - y**3,
    "x1(4x3^2-x1^2-x2^2)": lambda x, y, z: x * (4 * z * z - x * x - y * y),
    "x2(4x3^2-x1^2-x2^2)": lambda x, y, z: y * (4 * z * z - x * x - y * y),
    "x3(2x3^2-3x1^2-3x2^2)": lambda x, y, z: z * (2 * z * z - 3 * x * x - 3 * y * y),
    "x3(x1^2-x2^2)": lambda x, y, z: z * (x * x - y * y),
}


@dataclass
class HarmonicBasis:
    functions: list[np.ndarray]
    labels: list[str]
    residuals: list[float]


def harmonic_residual(phi: np.ndarray, m: MediumSpec) -> float:
    """``||A phi|| / (||A|| ||phi||)`` over interior cells of Omega."""
    g = m.grid
    A = operator(m)
    cells = g.interior(g.omega, diagonal=m.has_offdiag)
    Aphi = (A @ phi.ravel()).reshape(g.shape)[cells]
    scale = np.max(np.asarray(abs(A).sum(axis=1)))
    nphi = np.linalg.norm(phi[cells])
    return float(np.linalg.norm(Aphi) / (scale * nphi)) if nphi > 0 else 0.0


def harmonic_extension(m: MediumSpec, label: str, tol: float = 1e-12) -> np.ndarray:
    """An ``A``-harmonic field on B_R0 with boundary data the catalogued polynomial."""
    g = m.grid
    if g.dim == 1:
        if label != "1":
            raise ValueError("only constants are regular radial harmonics")
        return np.ones(g.shape)
    x, y, z = (c / g.R0 for c in g.coords)
    poly = POLY_HARMONICS[label](x, y, z)
    if m.identity_a:
        return poly
    prob = EllipticProblem(m, g.observation, np.zeros(g.shape), poly)
    return solve_dirichlet(prob, tol=tol)


def harmonic_basis(m: MediumSpec, count: int, eps_harm: float = 1e-8) -> HarmonicBasis:
    if count < 1:
        raise ValueError("count must be >= 1")
    limit = 1 if m.grid.dim == 1 else len(POLY_HARMONICS)
    if count > limit:
        raise ValueError(f"count {count} exceeds the catalog of {limit} harmonic functions")
    labels = list(POLY_HARMONICS)[:count]
    funcs, res = [], []
    for lab in labels:
        phi = harmonic_extension(m, lab)
        r = harmonic_residual(phi, m)
        if r > eps_harm:
            raise ConvergenceError(f"harmonic function {lab} misses the residual target", r, 0)
        funcs.append(phi)
        res.append(r)
    return HarmonicBasis(funcs, labels, res)


@lru_cache(maxsize=1)
def self_cell_constant() -> float:
    """``(1/h^2) * integral over a centred cube of side h of 1/(4 pi |r|)``.

    Splitting the cube into six pyramids with apex at the centre reduces the
    volume integral to a face integral: ``(3/2) * int_face 1/|q| dA``.
    """
    face, _ = integrate.dblquad(lambda z, y: 1.0 / np.sqrt(0.25 + y * y + z * z),
                                -0.5, 0.5, -0.5, 0.5, epsabs=1e-13, epsrel=1e-12)
    return 1.5 * face / (4 * np.pi)


def newtonian_potential(density: np.ndarray, targets: np.ndarray, grid: GridSpec,
                        chunk: int = 512) -> np.ndarray:
    """``N[rho](x) = int rho(y) / (4 pi |x - y|) dy`` at the ``targets`` cells.

    ``targets`` is a boolean mask; the result is zero elsewhere.
    """
    if density.shape != grid.shape or targets.shape != grid.shape:
        raise ValueError("target or density outside the grid")
    out = np.zeros(grid.shape)
    if grid.dim == 1:
        r = grid.axis
        inner = integrate.cumulative_trapezoid(density * r**2, r, initial=0.0)
        outer = integrate.cumulative_trapezoid(density * r, r, initial=0.0)
        outer = outer[-1] - outer
        with np.errstate(divide="ignore", invalid="ignore"):
            pot = np.where(r > 0, inner / np.where(r > 0, r, 1), 0.0) + outer
        out[targets] = pot[targets]
        return out
    h = grid.h
    src = np.flatnonzero(density)
    if src.size == 0:
        return out
    pts = [c.ravel() for c in grid.coords]
    ys = [p[src] for p in pts]
    rho = density.ravel()[src] * h**3
    tgt = np.flatnonzero(targets)
    vals = np.empty(tgt.size)
    for s in range(0, tgt.size, chunk):
        t = tgt[s:s + chunk]
        d = np.zeros((t.size, src.size))
        for p, y in zip(pts, ys):
            d += (p[t, None] - y[None, :]) ** 2
        d = np.sqrt(d)
        with np.errstate(divide="ignore"):
            k = np.where(d > 0, 1.0 / (4 * np.pi * np.where(d > 0, d, 1.0)), 0.0)
        vals[s:s + chunk] = k @ rho
    vals += self_cell_constant() * h**2 * density.ravel()[tgt]
    out.ravel()[tgt] = vals
    return out

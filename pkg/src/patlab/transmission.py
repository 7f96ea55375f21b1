"""Interior transmission pairs built from wave data, and probes of the
transmission spectrum.

Given two runs with equal boundary traces, ``w_j = u_hat_j(i tau) +
u_hat_j(-i tau)`` solves ``A w_j = tau^2 c_j^-2 w_j`` in the ball and the
pair shares Cauchy data on the boundary of Omega.  For leapfrog data the
identity is exact with ``tau`` replaced by ``(2/dt) sin(tau dt/2)``
(the even extension of the discrete solution), so the construction residual
is ``O(dt^2)`` plus the truncation of the time integral at ``T``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, solve_banded
from scipy.optimize import bisect, minimize_scalar
from scipy.sparse.linalg import splu

from .elliptic import POLY_HARMONICS, _wall_fraction, assemble, operator
from .medium import MediumSpec
from .moments import PreconditionError, laplace_transform, trace_mismatch
from .wave import SimulationRecord

EPS_TE = 5e-2
EPS_NZ = 1e-3
EPS_SCAN = 1e-1
STRIP_SAFETY = 0.8
_DEGREE_COUNT = {0: 1, 1: 4, 2: 9, 3: 16}


@dataclass
class TransmissionPair:
    tau: complex
    w1: np.ndarray
    w2: np.ndarray
    residuals: tuple[float, float]
    cauchy_mismatch: tuple[float, float]  # (value, conormal flux)
    scale: float
    degenerate: bool


def _interior_cells(m: MediumSpec) -> np.ndarray:
    g = m.grid
    inner = g.interior(g.omega, diagonal=m.has_offdiag)
    if g.dim == 1:
        inner[0] = False
    return inner


def helmholtz_residual(w: np.ndarray, m: MediumSpec, tau: complex) -> float:
    """``||A w - tau^2 c^-2 w|| / ||tau^2 c^-2 w||`` over cells whose stencil lies in Omega."""
    g = m.grid
    inner = _interior_cells(m)
    Aw = (operator(m) @ w.ravel()).reshape(g.shape)
    rhs = tau**2 * m.weight * w
    vol = g.volumes
    den = math.sqrt(float(np.sum((np.abs(rhs) ** 2 * vol)[inner])))
    num = math.sqrt(float(np.sum((np.abs(Aw - rhs) ** 2 * vol)[inner])))
    if den == 0:
        return 0.0 if num == 0 else math.inf
    return num / den


def cauchy_data(w: np.ndarray, m: MediumSpec) -> tuple[np.ndarray, np.ndarray]:
    """Face values and one-sided conormal fluxes of ``w`` on the faces of Omega."""
    g = m.grid
    faces = g.omega_faces
    wf = w.ravel()
    value = 0.5 * (wf[faces.inner] + wf[faces.outer])
    if g.dim == 1:
        flux = (wf[faces.outer] * g.axis[faces.outer] - wf[faces.inner] * g.axis[faces.inner]) / g.h
        r = faces.points[:, 0]
        flux = (flux - value * r) / (r * r) * r  # d(rw)/dr -> dw/dr at the midpoint
        return value, flux
    da = m.diag_a
    a_in = np.stack([d.ravel() for d in da])[faces.normal_axis, faces.inner]
    a_out = np.stack([d.ravel() for d in da])[faces.normal_axis, faces.outer]
    k = 2 * a_in * a_out / (a_in + a_out)
    flux = k * (wf[faces.outer] - wf[faces.inner]) / g.h
    return value, flux


def _mismatch(w1, w2, m1, m2) -> tuple[float, float]:
    v1, f1 = cauchy_data(w1, m1)
    v2, f2 = cauchy_data(w2, m2)
    vs = max(np.linalg.norm(v1), np.linalg.norm(v2))
    fs = max(np.linalg.norm(f1), np.linalg.norm(f2))
    dv = np.linalg.norm(v1 - v2)
    df = np.linalg.norm(f1 - f2)
    return (float(dv / vs) if vs > 0 else float(dv), float(df / fs) if fs > 0 else float(df))


def strip_halfwidth(*recs: SimulationRecord) -> float:
    """``STRIP_SAFETY * min delta_hat`` over the runs (infinite under finite extinction)."""
    out = math.inf
    for rec in recs:
        fit = rec.decay
        if fit.flag != "finite extinction":
            out = min(out, STRIP_SAFETY * fit.delta_hat)
    return out


def _field_scale(rec: SimulationRecord) -> float:
    """``||f|| R_omega / c0``: the size a transform of the data would have without cancellation."""
    m = rec.medium
    f = rec.initial.f
    return float(np.sqrt(np.sum((f * f * m.grid.volumes)[m.grid.omega])) * m.grid.R_omega / m.c0)


def pair_from_data(rec1: SimulationRecord, rec2: SimulationRecord, tau: complex,
                   eps_trace: float = 1e-6, eps_nz: float = EPS_NZ) -> TransmissionPair:
    tau = complex(tau)
    half = strip_halfwidth(rec1, rec2)
    if abs(tau.imag) >= half:
        raise PreconditionError(f"|Im tau| = {abs(tau.imag):.3g} outside the strip of half-width {half:.3g}")
    gap = trace_mismatch(rec1, rec2)
    if gap > eps_trace:
        raise PreconditionError(f"boundary traces differ by {gap:.3e} > eps_trace={eps_trace:.1e}")
    ws = []
    for rec in (rec1, rec2):
        w = laplace_transform(rec, 1j * tau) + laplace_transform(rec, -1j * tau)
        ws.append(w.real if tau.imag == 0 else w)
    w1, w2 = ws
    m1, m2 = rec1.medium, rec2.medium
    scale = max(_field_scale(rec1), _field_scale(rec2))
    norm = _pair_norm(w1, w2, m1)
    res = (helmholtz_residual(w1, m1, tau), helmholtz_residual(w2, m2, tau))
    return TransmissionPair(tau, w1, w2, res, _mismatch(w1, w2, m1, m2), scale,
                            norm <= eps_nz * scale)


def _pair_norm(w1, w2, m) -> float:
    g = m.grid
    sel = g.omega
    return float(np.sqrt(np.sum(((np.abs(w1) ** 2 + np.abs(w2) ** 2) * g.volumes)[sel])))


@dataclass
class Certificate:
    status: str
    residuals: tuple[float, float]
    cauchy_mismatch: tuple[float, float]
    norm: float

    @property
    def certified(self) -> bool:
        return self.status == "eigenpair candidate"

    def to_text(self) -> str:
        return "\n".join([
            f"status = {self.status}",
            f"residual_w1 = {self.residuals[0]!r}",
            f"residual_w2 = {self.residuals[1]!r}",
            f"value_mismatch = {self.cauchy_mismatch[0]!r}",
            f"flux_mismatch = {self.cauchy_mismatch[1]!r}",
            f"norm = {self.norm!r}",
        ]) + "\n"


def verify_pair(p: TransmissionPair, m1: MediumSpec, m2: MediumSpec, eps_te: float = EPS_TE,
                eps_nz: float = EPS_NZ) -> Certificate:
    """Recompute residuals and Cauchy mismatch from the fields alone."""
    norm = _pair_norm(p.w1, p.w2, m1)
    scale = p.scale if p.scale > 0 else 1.0
    if norm <= eps_nz * scale:
        return Certificate("not an eigenpair (trivial)", (0.0, 0.0), (0.0, 0.0), norm)
    res = (helmholtz_residual(p.w1, m1, p.tau), helmholtz_residual(p.w2, m2, p.tau))
    mis = _mismatch(p.w1, p.w2, m1, m2)
    ok = max(res) <= eps_te and max(mis) <= eps_te
    return Certificate("eigenpair candidate" if ok else "rejected", res, mis, norm)


# radial oracle ------------------------------------------------------------

def _regular_solution(layers, tau: float, R: float) -> tuple[float, float]:
    """``v = r u`` and ``v'`` at ``R`` for the regular radial solution through the layers."""
    a, b = 1.0, 0.0  # v = a sin(k r) + b cos(k r) in the current layer
    lo = 0.0
    prev_k = None
    for r_out, c in layers:
        k = tau / c
        if prev_k is not None:
            v = a * math.sin(prev_k * lo) + b * math.cos(prev_k * lo)
            dv = prev_k * (a * math.cos(prev_k * lo) - b * math.sin(prev_k * lo))
            a = v * math.sin(k * lo) + dv / k * math.cos(k * lo)
            b = v * math.cos(k * lo) - dv / k * math.sin(k * lo)
        prev_k = k
        lo = r_out
        if r_out >= R:
            break
    v = a * math.sin(prev_k * R) + b * math.cos(prev_k * R)
    dv = prev_k * (a * math.cos(prev_k * R) - b * math.sin(prev_k * R))
    return v, dv


def _layers(profile, R: float) -> list[tuple[float, float]]:
    if np.isscalar(profile):
        return [(R, float(profile))]
    out = [(float(r), float(c)) for r, c in profile]
    if out[-1][0] < R:
        raise ValueError("layer profile must reach the boundary radius")
    return out


def te_determinant(c1_profile, c2_profile, tau: float, R: float = 1.0) -> float:
    """``v1 v2' - v1' v2`` at ``R`` (``v = r u``, angular order 0)."""
    v1, d1 = _regular_solution(_layers(c1_profile, R), tau, R)
    v2, d2 = _regular_solution(_layers(c2_profile, R), tau, R)
    return v1 * d2 - d1 * v2


@dataclass
class OracleResult:
    roots: list[float]
    degenerate: bool


def radial_te_oracle(c1_profile, c2_profile, tau_range, R: float = 1.0, samples: int = 4000,
                     xtol: float = 1e-8) -> OracleResult:
    """Real roots of the order-0 matching determinant on ``tau_range``.

    Profiles are a constant speed or ``[(r_outer, c), ...]`` innermost first.
    """
    lo, hi = float(tau_range[0]), float(tau_range[1])
    ts = np.linspace(lo, hi, samples)
    d = np.array([te_determinant(c1_profile, c2_profile, t, R) for t in ts])
    scale = max(1.0, float(np.max(np.abs(ts))))
    if np.all(np.abs(d) <= 1e-12 * scale):
        return OracleResult([], True)
    fn = lambda t: te_determinant(c1_profile, c2_profile, t, R)
    roots = []
    for i in range(samples - 1):
        if d[i] == 0 and ts[i] > 0:
            roots.append(float(ts[i]))
        elif d[i] * d[i + 1] < 0:
            roots.append(float(bisect(fn, ts[i], ts[i + 1], xtol=xtol)))
    return OracleResult(roots, False)


# strip scan ---------------------------------------------------------------

@dataclass
class StripScan:
    tau_samples: np.ndarray
    indicator: np.ndarray
    flagged_eigen: np.ndarray
    refined: np.ndarray
    singular: np.ndarray
    eps_scan: float
    degenerate: bool = False
    mirror_defect: float = 0.0
    strip: float = math.inf
    extra: dict = field(default_factory=dict)

    @property
    def below(self) -> np.ndarray:
        return ~self.singular & (self.indicator <= self.eps_scan)

    def longest_flagged_run(self) -> int:
        best = run = 0
        for b in self.below:
            run = run + 1 if b else 0
            best = max(best, run)
        return best

    def to_csv(self, path) -> None:
        flags = np.zeros(len(self.tau_samples), int)
        flags[self.flagged_eigen] = 1
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["re_tau", "im_tau", "indicator", "flag"])
            for t, v, fl, s in zip(self.tau_samples, self.indicator, flags, self.singular):
                w.writerow([repr(t.real), repr(t.imag), "nan" if s else repr(float(v)), int(fl)])


class _RadialDtN:
    """Order-0 Dirichlet-to-Neumann values on the sphere ``r = R_omega``."""

    def __init__(self, m: MediumSpec):
        g = m.grid
        N = g.R_omega / g.h
        if abs(N - round(N)) > 1e-9:
            raise ValueError("radial grid must put a node on the boundary of Omega")
        self.N = int(round(N))
        self.h = g.h
        self.R = g.R_omega
        self.w = m.weight[1:self.N]

    def __call__(self, tau: complex) -> complex:
        # Numerov for v'' + q v = 0, q = tau^2 c^-2; the poles of the two maps must
        # sit at nearly the same tau, which a second-order scheme does not deliver
        h, N, R = self.h, self.N, self.R
        q = tau**2 * self.w
        n = N - 1
        s = h * h / 12
        ab = np.zeros((3, n), complex)
        ab[0, 1:] = 1 + s * q[1:]
        ab[1] = -2 + 10 * s * q[:n]
        ab[2, :-1] = 1 + s * q[:-1]
        rhs = np.zeros(n, complex)
        rhs[-1] = -R * (1 + s * q[-1])  # boundary node carries the same c as its neighbour
        v = solve_banded((1, 1), ab, rhs)
        if not np.all(np.isfinite(v)):
            raise LinAlgError("non-finite interior solution")
        # v'(R) = (v_N - v_N-1)/h + h/6 (2 v''_N + v''_N-1) + O(h^3)
        dv = (R - v[-1]) / h - h / 6 * (2 * q[-1] * R + q[-1] * v[-1])
        return (dv - 1.0) / R


class _BallDtN:
    """Dirichlet-to-Neumann mismatch on the cut-cell sphere for harmonic data."""

    def __init__(self, m: MediumSpec, max_degree: int):
        if m.has_offdiag:
            raise ValueError("the 3-D scan supports diagonal coefficients only")
        g = m.grid
        R = g.R_omega
        self.m = m
        active = g.ball(R)
        self.idx = np.flatnonzero(active)
        self.A = assemble(m, wall=R)[self.idx][:, self.idx].tocsc()
        self.w = m.weight.ravel()[self.idx]
        pos = np.stack(g.coords, axis=-1).reshape(-1, 3)
        da = m.diag_a
        flat = np.arange(g.size).reshape(g.shape)
        inner, coef, pts, dist = [], [], [], []
        for ax in range(3):
            for s in (1, -1):
                nb = np.roll(active, -s, axis=ax)
                src = active & ~nb
                cells = flat[src]
                nbr = np.roll(flat, -s, axis=ax)[src]
                theta = _wall_fraction(pos[cells], pos[nbr], R)
                ap, aq = da[ax].ravel()[cells], da[ax].ravel()[nbr]
                k = 2 * ap * aq / (ap + aq) / g.h**2
                inner.append(cells)
                coef.append(k / theta)
                pts.append(pos[cells] + theta[:, None] * (pos[nbr] - pos[cells]))
                dist.append(theta * g.h)
        cells = np.concatenate(inner)
        self.rows = np.searchsorted(self.idx, cells)
        self.coef = np.concatenate(coef)
        self.dist = np.concatenate(dist)
        self.k_face = self.coef * self.dist * g.h  # harmonic-mean a on the face
        pts = np.concatenate(pts)
        labels = list(POLY_HARMONICS)[:_DEGREE_COUNT[max_degree]]
        data = np.stack([POLY_HARMONICS[l](*pts.T) for l in labels], axis=1)
        # orthonormal data in the face-weighted l2 product
        q, r = np.linalg.qr(data * g.h)  # face area ~ h^2, so sqrt weight h
        self.data = data @ np.linalg.inv(r)
        self.face_w = g.h
        self.R = R

    def __call__(self, media_w: tuple[np.ndarray, np.ndarray], tau: complex) -> np.ndarray:
        n = len(self.idx)
        out = []
        for w in media_w:
            M = (self.A - sp.diags(tau**2 * w)).astype(complex).tocsc()
            B = np.zeros((n, self.data.shape[1]), complex)
            np.add.at(B, self.rows, self.coef[:, None] * self.data)
            sol = splu(M).solve(B)
            flux = self.k_face[:, None] * (self.data - sol[self.rows]) / self.dist[:, None]
            out.append(flux)
        return (out[0] - out[1]) * self.face_w


def _scan_values(fn, taus) -> tuple[np.ndarray, np.ndarray]:
    vals = np.full(len(taus), np.nan)
    bad = np.zeros(len(taus), bool)
    for i, t in enumerate(taus):
        try:
            v = fn(t)
        except (LinAlgError, RuntimeError, ValueError):
            bad[i] = True
            continue
        if not np.isfinite(v):
            bad[i] = True
        else:
            vals[i] = v
    return vals, bad


def strip_scan(m1: MediumSpec, m2: MediumSpec, tau_grid, eps_scan: float = EPS_SCAN,
               strip: float = math.inf, max_degree: int = 0, refine: bool = True,
               mirror_samples: int = 5) -> StripScan:
    """Smallest singular value of the DtN mismatch over the samples.

    Radial grids use the order-0 sector (the indicator is ``R |Lambda_1 -
    Lambda_2|``); 3-D grids use harmonic polynomial data up to
    ``max_degree`` on the cut-cell sphere.  ``strip`` is the admissible
    half-width in ``Im tau``.
    """
    if m1.grid != m2.grid:
        raise ValueError("media live on different grids")
    taus = np.asarray(tau_grid, complex).ravel()
    if np.any(np.abs(taus.imag) >= strip):
        raise ValueError(f"tau samples leave the strip |Im tau| < {strip:.3g}")
    R = m1.grid.R_omega
    if m1.grid.dim == 1:
        d1, d2 = _RadialDtN(m1), _RadialDtN(m2)
        fn = lambda t: float(R * abs(d1(t) - d2(t)))
    else:
        dtn = _BallDtN(m1, max_degree)
        w1 = m1.weight.ravel()[dtn.idx]
        w2 = m2.weight.ravel()[dtn.idx]
        fn = lambda t: float(R * np.linalg.svd(dtn((w1, w2), t), compute_uv=False)[-1])
    vals, bad = _scan_values(fn, taus)
    good = ~bad
    degenerate = bool(good.any() and np.all(vals[good] <= eps_scan * 1e-6))
    # every sampled local minimum is a candidate; a root between samples can sit
    # well above eps_scan at the nearest sample, so the test uses the refined value
    cand = []
    if not degenerate:
        for i in range(1, len(taus) - 1):
            if bad[i - 1] or bad[i] or bad[i + 1]:
                continue
            if vals[i] <= vals[i - 1] and vals[i] <= vals[i + 1]:
                cand.append(i)
    flagged, refined = [], []
    for i in cand:
        t_best, v_best = taus[i], vals[i]
        if refine:
            a, b = taus[i - 1], taus[i + 1]
            line = lambda s: fn(a + s * (b - a))
            try:
                res = minimize_scalar(line, bounds=(0.0, 1.0), method="bounded",
                                      options={"xatol": 1e-10})
                if res.fun < v_best:
                    t_best, v_best = a + res.x * (b - a), float(res.fun)
            except (LinAlgError, RuntimeError, ValueError):
                pass
        if v_best <= eps_scan:
            flagged.append(i)
            refined.append(t_best)
    flagged = np.array(flagged, int)
    refined = np.array(refined, complex)
    mirror = 0.0
    off = np.flatnonzero(good & (taus.imag != 0))[:mirror_samples]
    for i in off:
        v = fn(np.conj(taus[i]))
        mirror = max(mirror, abs(v - vals[i]) / max(abs(vals[i]), 1e-300))
    return StripScan(taus, vals, flagged, refined, bad, eps_scan, degenerate, mirror, strip)

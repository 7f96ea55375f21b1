"""Time moments ``u^(k) = (-1)^k / k! int_0^inf t^k u dt``, Laplace transforms
and the orthogonality / discriminator identities built from them.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, special

from .elliptic import HarmonicBasis, operator
from .grid import GridSpec
from .medium import MediumSpec
from .wave import DecayFit, SimulationRecord

EPS_MOM = 1e-6
EPS_SIGN = 1e-2
EPS_TRACE = 1e-6
K_MAX = 8


class PreconditionError(ValueError):
    pass


class KZeroUndetectable(ValueError):
    """All even moments vanish: only ``f = 0`` is compatible with the data."""


def _norm(u: np.ndarray, grid: GridSpec, mask: np.ndarray | None = None) -> float:
    mask = grid.observation if mask is None else mask
    return float(np.sqrt(np.sum((np.abs(u) ** 2 * grid.volumes)[mask])))


@dataclass
class MomentTable:
    moments: list[np.ndarray]
    norms: list[float]
    tail_bounds: list[float]
    k0_even: int | None
    grid: GridSpec
    fit: DecayFit | None = None
    eps_mom: float = EPS_MOM

    @property
    def K(self) -> int:
        return len(self.moments) - 1

    def rows(self):
        for k, (n, t) in enumerate(zip(self.norms, self.tail_bounds)):
            yield {"k": k, "norm": n, "tail_bound": t}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, ["k", "norm", "tail_bound"], lineterminator="\n")
            w.writeheader()
            w.writerows(self.rows())


def _detect_k0(norms: list[float], eps: float) -> int | None:
    scale = norms[1] if len(norms) > 1 else 0.0
    if scale == 0:
        return None
    for k in range(1, (len(norms) - 1) // 2 + 1):
        if norms[2 * k] > eps * scale:
            return k
    return None


def tail_integral(C: float, delta: float, T: float, k: int) -> float:
    """``C/k! * int_T^inf t^k exp(-delta t) dt``."""
    if delta <= 0:
        return math.inf
    return float(C * special.gammaincc(k + 1, delta * T) / delta ** (k + 1))


def time_moments(rec: SimulationRecord, K: int = K_MAX, eps_mom: float = EPS_MOM,
                 need_tail: bool = True) -> MomentTable:
    """Moments on ``B_R0`` (zero elsewhere) for ``k = 0..K``.

    Uses the step-resolution running sums when the run accumulated them,
    otherwise trapezoid quadrature over the recorded frames.
    """
    if K < 4 or K > K_MAX:
        raise ValueError(f"K must lie in [4, {K_MAX}]")
    g = rec.grid
    if len(rec.moment_sums) >= K + 1:
        raw = [rec.moment_sums[k] for k in range(K + 1)]
    elif rec.frames is not None:
        t = rec.times
        raw = [np.trapezoid((t**k)[:, None] * rec.frames.reshape(len(t), -1), t, axis=0)
               .reshape(rec.frames.shape[1:]) for k in range(K + 1)]
    else:
        raise PreconditionError("record has neither interior frames nor moment sums")
    obs = g.observation
    moments = []
    for k, s in enumerate(raw):
        u = rec.embed(np.asarray(s, float)) * ((-1) ** k / math.factorial(k))
        u[~obs] = 0.0
        moments.append(u)
    norms = [_norm(u, g) for u in moments]
    fit = None
    tails = [0.0] * (K + 1)
    if np.any(rec.energy_history > 0):
        fit = rec.decay
        if fit.flag == "possibly trapping":
            if need_tail:
                raise PreconditionError("decay fit flags possible trapping; no tail bound")
            tails = [math.inf] * (K + 1)
        elif fit.flag != "finite extinction":
            tails = [tail_integral(fit.C_hat, fit.delta_hat, rec.T, k) for k in range(K + 1)]
        else:
            # collapse to the floor: bound by the last sample held constant for one more window
            e_last = float(np.sqrt(rec.energy_history[-1]))
            width = fit.fit_window[1] - fit.fit_window[0] or rec.T
            tails = [e_last * (rec.T + width) ** k * width / math.factorial(k) for k in range(K + 1)]
    return MomentTable(moments, norms, tails, _detect_k0(norms, eps_mom), g, fit, eps_mom)


def _abscissa_ok(rec: SimulationRecord, p: complex, margin: float) -> float:
    fit = rec.decay
    delta = math.inf if fit.flag == "finite extinction" else fit.delta_hat
    if p.real <= -delta + margin * (delta if math.isfinite(delta) else 1.0):
        raise PreconditionError(f"Re p = {p.real:.3g} too close to the decay abscissa -{delta:.3g}")
    return delta


def laplace_transform(rec: SimulationRecord, p: complex, margin: float = 0.1) -> np.ndarray:
    """``int_0^T exp(-p t) u dt`` on ``B_R0`` (complex, zero elsewhere)."""
    p = complex(p)
    if np.any(rec.energy_history > 0):
        _abscissa_ok(rec, p, margin)
    if p in rec.laplace:
        win = rec.laplace[p]
    elif rec.frames is not None:
        t = rec.times
        w = np.exp(-p * t)
        win = np.trapezoid(w[:, None] * rec.frames.reshape(len(t), -1), t, axis=0)
        win = win.reshape(rec.frames.shape[1:])
    else:
        raise PreconditionError("record has neither interior frames nor a stored transform at p")
    out = rec.embed(np.asarray(win, complex))
    out[~rec.grid.observation] = 0
    return out


def laplace_tail_bound(rec: SimulationRecord, p: complex) -> float:
    fit = rec.decay
    if fit.flag == "finite extinction":
        return 0.0
    rate = p.real + fit.delta_hat
    return float(fit.C_hat * np.exp(-rate * rec.T) / rate) if rate > 0 else math.inf


def partial_sum(table: MomentTable, p: complex, K: int | None = None) -> np.ndarray:
    K = table.K if K is None else K
    out = np.zeros(table.grid.shape, complex)
    pk = 1.0 + 0j
    for k in range(K + 1):
        out += table.moments[k] * pk
        pk *= p
    return out


def series_consistency(table: MomentTable, rec: SimulationRecord, p_samples) -> list[dict]:
    """Relative gap between ``u_hat(p)`` and the moment partial sums.

    ``bound`` is the geometric tail ``C q^(K+1)/(1-q)``, ``q = |p|/delta``,
    with ``C = max_k ||u^(k)|| delta^k``, divided by ``||u_hat(p)||``.
    """
    fit = rec.decay
    delta = fit.delta_hat
    if fit.flag == "finite extinction":
        delta = math.inf
    out = []
    g = table.grid
    for p in p_samples:
        p = complex(p)
        if math.isfinite(delta) and abs(p) >= delta / 2:
            raise PreconditionError(f"|p| = {abs(p):.3g} is not below delta/2 = {delta / 2:.3g}")
        uh = laplace_transform(rec, p)
        ref = _norm(uh, g)
        gaps = [_norm(uh - partial_sum(table, p, K), g) / (ref if ref > 0 else 1.0)
                for K in range(table.K + 1)]
        if math.isfinite(delta):
            C = max(n * delta**k for k, n in enumerate(table.norms))
            q = abs(p) / delta
            bound = C * q ** (table.K + 1) / (1 - q) / (ref if ref > 0 else 1.0)
        else:
            bound = 0.0
        out.append({"p": p, "gap": gaps[-1], "gaps": gaps, "bound": bound, "norm": ref})
    return out


def recursion_residual(table: MomentTable, m: MediumSpec, f: np.ndarray,
                       zero_ref: float = 1e-2) -> list[dict]:
    """``A u^(1) = c^-2 f`` and ``A u^(k) = -c^-2 u^(k-2)`` on interior cells of ``B_R0``.

    Each entry carries ``value`` and ``relative``.  A reference field below
    ``zero_ref * ||c^-2 f||`` counts as zero (``u^(0)`` always does); the
    value is then normalised by ``||c^-2 f||`` and ``relative`` is False.
    """
    g = m.grid
    A = operator(m)
    cells = g.interior(g.observation, diagonal=m.has_offdiag)
    w = m.weight
    scale = _norm(w * f, g, cells)
    out = []
    for k in range(1, table.K + 1):
        Au = (A @ table.moments[k].ravel()).reshape(g.shape)
        ref = w * (f if k == 1 else -table.moments[k - 2])
        res = _norm(Au - ref, g, cells)
        rn = _norm(ref, g, cells)
        if rn > zero_ref * scale and rn > 0:
            out.append({"k": k, "value": res / rn, "relative": True})
        else:
            out.append({"k": k, "value": res / scale if scale > 0 else res, "relative": False})
    return out


def trace_mismatch(rec1: SimulationRecord, rec2: SimulationRecord) -> float:
    """Relative L2 gap between two boundary traces (the second interpolated to the first's times)."""
    if rec1.grid != rec2.grid:
        raise PreconditionError("records live on different grids")
    a = rec1.boundary_trace
    t1, t2 = rec1.times, rec2.times
    if len(t1) == len(t2) and np.allclose(t1, t2, rtol=0, atol=1e-12):
        b = rec2.boundary_trace
    else:
        tt = np.clip(t1, t2[0], t2[-1])
        b = np.stack([np.interp(tt, t2, col) for col in rec2.boundary_trace.T], axis=1)
        b[t1 > t2[-1]] = 0.0
    ref = np.linalg.norm(a)
    diff = np.linalg.norm(a - b)
    if ref == 0:
        return 0.0 if diff == 0 else math.inf
    return float(diff / ref)


def _require_traces(rec1, rec2, eps_trace: float) -> float:
    gap = trace_mismatch(rec1, rec2)
    if gap > eps_trace:
        raise PreconditionError(f"boundary traces differ by {gap:.3e} > eps_trace={eps_trace:.1e}")
    return gap


@dataclass
class DiscriminatorReport:
    phi_label: str
    value: float
    k_used: int
    localized_region: int | None = None
    scale: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def relative(self) -> float:
        return abs(self.value) / self.scale if self.scale > 0 else abs(self.value)


def reports_to_csv(reports: list[DiscriminatorReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "phi", "region", "value", "relative"])
        for r in reports:
            w.writerow([r.k_used, r.phi_label, "" if r.localized_region is None else r.localized_region,
                        repr(r.value), repr(r.relative)])


def orthogonality_test(rec1, rec2, m1: MediumSpec, m2: MediumSpec, f1, f2,
                       basis: HarmonicBasis, K: int, eps_trace: float = EPS_TRACE,
                       tables: tuple[MomentTable, MomentTable] | None = None) -> list[DiscriminatorReport]:
    """``int_Omega (c1^-2 u1^(k) - c2^-2 u2^(k)) phi`` for each ``phi`` and ``k``.

    ``k_used = -1`` labels the initial-data row ``int (c1^-2 f1 - c2^-2 f2) phi``.
    """
    _require_traces(rec1, rec2, eps_trace)
    g = m1.grid
    if tables is None:
        kk = max(K, 4)
        tables = (time_moments(rec1, kk, need_tail=False), time_moments(rec2, kk, need_tail=False))
    t1, t2 = tables
    om = g.omega
    vol = g.volumes
    out = []
    w1, w2 = m1.weight, m2.weight
    for lab, phi in zip(basis.labels, basis.functions):
        pairs = [(-1, f1, f2)] + [(k, t1.moments[k], t2.moments[k]) for k in range(K + 1)]
        for k, a, b in pairs:
            x, y = w1 * a, w2 * b
            val = float(np.sum(((x - y) * phi * vol)[om]))
            scale = float(np.sum((np.abs(x * phi) * vol)[om]) + np.sum((np.abs(y * phi) * vol)[om]))
            out.append(DiscriminatorReport(lab, val, k, None, scale))
    return out


def _k0_or_raise(table: MomentTable) -> int:
    if table.k0_even is None:
        raise KZeroUndetectable("k0 undetectable: every even moment is below threshold")
    return table.k0_even


def discriminator_from_fields(u: np.ndarray, m1: MediumSpec, m2: MediumSpec,
                              eps_c: float = 1e-8, eps_u: float = 1e-8) -> DiscriminatorReport:
    """``D = int_Omega (c1^-2 - c2^-2) |u|^2`` for a given moment field ``u``."""
    g = m1.grid
    om = g.omega
    vol = g.volumes
    dw = m1.weight - m2.weight
    D = float(np.sum((dw * np.abs(u) ** 2 * vol)[om]))
    scale = float(np.sum((np.abs(dw) * np.abs(u) ** 2 * vol)[om]))
    umax = float(np.abs(u[om]).max()) if om.any() else 0.0
    viol = om & (np.abs(m1.c - m2.c) > eps_c) & (np.abs(u) > eps_u * max(umax, 1e-300))
    return DiscriminatorReport("|u^(2k0)|^2", D, -1, None, scale,
                               {"violation_measure": float(np.sum(vol[viol]))})


def discriminator(rec1, rec2, m1: MediumSpec, m2: MediumSpec, K: int = K_MAX,
                  eps_trace: float = EPS_TRACE, table1: MomentTable | None = None) -> DiscriminatorReport:
    _require_traces(rec1, rec2, eps_trace)
    t1 = table1 or time_moments(rec1, K, need_tail=False)
    k0 = _k0_or_raise(t1)
    rep = discriminator_from_fields(t1.moments[2 * k0], m1, m2)
    rep.k_used = 2 * k0
    return rep


def smoothstep5(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t**3 * (10 - 15 * t + 6 * t * t)


def region_distances(grid: GridSpec, regions) -> tuple[list[np.ndarray], float]:
    """Distance fields to each region and ``r0 = min(dist to the sphere |x|=R0, pairwise gaps)``."""
    dists = [ndimage.distance_transform_edt(~k) * grid.h for k in regions]
    r1 = min(grid.R0 - float(grid.r[k].max()) for k in regions)
    r2 = math.inf
    for i in range(len(regions)):
        for j in range(i + 1, len(regions)):
            r2 = min(r2, float(dists[i][regions[j]].min()))
    return dists, min(r1, r2)


def cutoff(grid: GridSpec, regions, j: int) -> tuple[np.ndarray, dict]:
    """Smooth cutoff ``chi_j`` and its cellwise support checks."""
    if grid.dim != 3:
        raise ValueError("cutoffs need a 3-D grid")
    dists, r0 = region_distances(grid, regions)
    d = dists[j]
    chi = 1.0 - smoothstep5((d - r0 / 6) / (r0 / 6))
    inner = d <= r0 / 6
    outer = d >= r0 / 3
    others = np.zeros(grid.shape, bool)
    for i, di in enumerate(dists):
        if i != j:
            others |= di <= r0 / 6
    union = np.zeros(grid.shape, bool)
    for k in regions:
        union |= k
    # cells touched by the discrete gradient of chi: stencil neighbours of a jump
    grad = np.zeros(grid.shape, bool)
    for ax in range(3):
        jump = np.diff(chi, axis=ax) != 0
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[ax], hi[ax] = slice(0, -1), slice(1, None)
        grad[tuple(lo)] |= jump
        grad[tuple(hi)] |= jump
    checks = {
        "one_on_Kprime": bool(np.all(chi[inner] == 1.0)),
        "zero_outside_U": bool(np.all(chi[outer] == 0.0)),
        "bounded": bool(np.all((chi >= 0) & (chi <= 1))),
        "grad_in_O": bool(not np.any(grad & union) and np.all(grid.observation[grad])),
        "disjoint_from_other_Kprime": bool(not np.any((chi > 0) & others)),
        "r0": r0,
    }
    return chi, checks


def localized_discriminator(rec1, rec2, m1: MediumSpec, m2: MediumSpec, region_j: int,
                            K: int = K_MAX, eps_trace: float = EPS_TRACE,
                            tables: tuple[MomentTable, MomentTable] | None = None) -> DiscriminatorReport:
    """Localized discriminator on region ``K_j`` in integration-by-parts form.

    ``value = -sum w [A, chi_j] u`` with ``u = u1^(2k0)`` and
    ``w = u1^(2k0+2) - u2^(2k0+2)``; the commutator lives where ``chi_j``
    varies.  ``extra['direct']`` is ``int chi_j (c1^-2 u1 - c2^-2 u2) u`` for
    comparison and ``extra['checks']`` the cutoff support checks.
    """
    regions = m1.regions
    if not regions or not (0 <= region_j < len(regions)):
        raise PreconditionError("region index out of range")
    from .medium import validate_medium

    bad = [v for v in validate_medium(m1).violations if v.invariant.startswith("region")]
    if bad:
        raise PreconditionError(f"region geometry invalid: {bad[0].detail}")
    _require_traces(rec1, rec2, eps_trace)
    if tables is None:
        tables = (time_moments(rec1, K, need_tail=False), time_moments(rec2, K, need_tail=False))
    t1, t2 = tables
    k0 = _k0_or_raise(t1)
    if 2 * k0 + 2 > t1.K:
        raise PreconditionError(f"need moments up to {2 * k0 + 2}")
    g = m1.grid
    chi, checks = cutoff(g, regions, region_j)
    u = t1.moments[2 * k0]
    u2 = t2.moments[2 * k0]
    w = t1.moments[2 * k0 + 2] - t2.moments[2 * k0 + 2]
    A = operator(m1)
    vol = g.volumes
    comm = (A @ (chi * u).ravel()).reshape(g.shape) - chi * (A @ u.ravel()).reshape(g.shape)
    val = -float(np.sum(w * comm * vol))
    direct = float(np.sum(chi * (m1.weight * u - m2.weight * u2) * u * vol))
    scale = float(np.sum(chi * (m1.weight + m2.weight) * u * u * vol))
    return DiscriminatorReport(f"chi_{region_j}", val, 2 * k0, region_j, scale,
                               {"direct": direct, "checks": checks})


@dataclass
class BoundaryMoment:
    k0: int | None
    g_values: np.ndarray
    sign_verdict: str
    norms: list[float] = field(default_factory=list)
    flag: str = ""


def sign_verdict(g: np.ndarray, eps_sign: float = EPS_SIGN) -> str:
    if g.size == 0 or not np.any(g):
        return "zero"
    lo, hi = float(g.min()), float(g.max())
    if lo >= -eps_sign * hi and hi > 0:
        return "positive"
    if hi <= eps_sign * abs(lo) and lo < 0:
        return "negative"
    return "mixed"


def trace_moments(rec: SimulationRecord, n_max: int) -> list[np.ndarray]:
    """``int t^j u dt`` over the boundary samples for ``j = 0..2 n_max``."""
    t = rec.times
    return [np.trapezoid((t**j)[:, None] * rec.boundary_trace, t, axis=0) for j in range(2 * n_max + 1)]


def boundary_moment(rec: SimulationRecord, n_max: int = 6, eps_mom: float = EPS_MOM,
                    eps_sign: float = EPS_SIGN) -> BoundaryMoment:
    """First ``n >= 1`` with ``int t^(2n) u dt`` nontrivial on the boundary samples.

    Nontrivial means the RMS of ``int t^(2n) u dt / (2n)!`` exceeds
    ``eps_mom`` times the largest such RMS over orders ``0..2 n_max``.  The
    first odd moment is no safe reference: for zero-mean radial data it
    vanishes outside the support.  ``n = 0`` is skipped: the zeroth moment
    vanishes identically.
    """
    mom = trace_moments(rec, n_max)
    rms = [float(np.sqrt(np.mean(mk**2))) / math.factorial(j) for j, mk in enumerate(mom)]
    scale = max(rms)
    norms = [rms[2 * n] for n in range(n_max + 1)]
    if scale == 0:
        return BoundaryMoment(None, np.zeros(rec.boundary_trace.shape[1]), "zero", norms, "B empty")
    for n in range(1, n_max + 1):
        if norms[n] > eps_mom * scale:
            gv = mom[2 * n]
            return BoundaryMoment(n, gv, sign_verdict(gv, eps_sign), norms)
    return BoundaryMoment(None, np.zeros(rec.boundary_trace.shape[1]), "zero", norms, "B empty")

"""Leapfrog solver for ``c^-2 u_tt + A u = 0``, local energy and decay fits.

Two solvers return the same :class:`SimulationRecord`:

* :func:`simulate` on the 3-D grid, truncated by a quadratic sponge (open
  runs) or by a reflecting Dirichlet wall ``|x| = R`` (eigenmode runs);
* :func:`simulate_radial` for radial media, written for ``v = r u`` with a
  Mur outflow condition at ``R_sim``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .elliptic import _wall_fraction, operator, spectral_bound
from .grid import GridSpec
from .medium import MediumSpec, sym3_eigvalsh

CFL_SAFETY = 0.9
ENERGY_TAIL = 1e-10


class CFLError(ValueError):
    pass


class SimulationError(RuntimeError):
    def __init__(self, message: str, step: int):
        super().__init__(f"{message} at step {step}")
        self.step = step


@dataclass
class InitialState:
    f: np.ndarray
    g: np.ndarray | None = None

    def check(self, grid: GridSpec, support: np.ndarray) -> None:
        for name, arr in (("f", self.f), ("g", self.g)):
            if arr is None:
                continue
            if arr.shape != grid.shape:
                raise ValueError(f"{name} has shape {arr.shape}, grid is {grid.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite values")
            if np.any(arr[~support] != 0):
                raise ValueError(f"{name} is not supported in the admissible region")


@dataclass
class WaveConfig:
    """Forward-run settings.

    ``T`` is the horizon; with ``adaptive`` the run stops earlier, at the
    first sample where the local energy falls below ``energy_tail * peak``.
    ``wall`` replaces the sponge by a Dirichlet wall at that radius.
    ``moment_K`` and ``laplace_p`` request running time integrals computed
    at every step, independent of ``record_stride``.
    """

    medium: MediumSpec
    initial: InitialState
    T: float = 8.0
    dt: float | None = None
    sponge_width: float = 1.2
    sponge_strength: float | None = None
    record_stride: int = 1
    record_interior: bool = True
    wall: float | None = None
    adaptive: bool = True
    energy_tail: float = ENERGY_TAIL
    moment_K: int = 0
    laplace_p: tuple = ()


@dataclass
class RadialWaveConfig:
    medium: MediumSpec
    initial: InitialState
    T: float = 8.0
    dt: float | None = None
    record_stride: int = 1
    adaptive: bool = True
    energy_tail: float = ENERGY_TAIL
    moment_K: int = 0
    laplace_p: tuple = ()


@dataclass
class DecayFit:
    delta_hat: float
    C_hat: float
    fit_window: tuple[float, float]
    residual: float
    flag: str = ""


@dataclass
class SimulationRecord:
    """Sampled output of a run.

    ``frames`` holds ``u`` on ``grid.window`` (3-D) or on all nodes
    (radial); ``boundary_trace`` has one column per sample point of the
    boundary of Omega.  ``moment_sums[k]`` is the step-resolution trapezoid
    sum of ``t^k u`` and ``laplace[p]`` that of ``exp(-p t) u``, both on the
    same window as ``frames``.
    """

    grid: GridSpec
    medium: MediumSpec
    initial: InitialState
    dt: float
    stride: int
    times: np.ndarray
    boundary_trace: np.ndarray
    trace_points: np.ndarray
    energy_history: np.ndarray
    window: tuple[slice, ...]
    frames: np.ndarray | None = None
    wall: float | None = None
    moment_sums: dict = field(default_factory=dict)
    laplace: dict = field(default_factory=dict)
    stop_reason: str = ""
    _fit: DecayFit | None = None

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def decay(self) -> DecayFit:
        if self._fit is None:
            self._fit = fit_decay(self)
        return self._fit

    def embed(self, win: np.ndarray) -> np.ndarray:
        """Window array -> full-grid array (zero outside the window)."""
        out = np.zeros(self.grid.shape, dtype=win.dtype)
        out[self.window] = win
        return out

    def scaled(self, alpha: float) -> "SimulationRecord":
        """Record of the run with data ``alpha * (f, g)``."""
        g = None if self.initial.g is None else alpha * self.initial.g
        return SimulationRecord(
            self.grid, self.medium, InitialState(alpha * self.initial.f, g), self.dt, self.stride,
            self.times.copy(), alpha * self.boundary_trace, self.trace_points,
            alpha**2 * self.energy_history, self.window,
            None if self.frames is None else alpha * self.frames, self.wall,
            {k: alpha * v for k, v in self.moment_sums.items()},
            {p: alpha * v for p, v in self.laplace.items()}, self.stop_reason)


def cfl_limit(m: MediumSpec) -> float:
    """``CFL_SAFETY * h / (c_max * sqrt(3 * |a|_max))``."""
    amax = 1.0 if m.identity_a else float(sym3_eigvalsh(m.a)[..., -1].max())
    return CFL_SAFETY * m.grid.h / (float(m.c.max()) * np.sqrt(3 * amax))


def sponge_profile(grid: GridSpec, width: float, strength: float) -> np.ndarray:
    start = grid.R_sim - width
    s = np.clip((grid.r - start) / width, 0.0, 1.0)
    return strength * s * s


@lru_cache(maxsize=16)
def energy_form(m: MediumSpec, wall: float | None = None) -> sp.csr_matrix:
    """Sparse ``Q`` with ``u^T Q u = int_B a grad u . grad u``.

    ``B`` is ``B_R0``, or the wall ball (then ``u = 0`` at the wall is
    built in and ``Q = W A`` on that ball).
    """
    g = m.grid
    h = g.h
    mask = g.observation if wall is None else g.ball(wall)
    n = g.size
    if g.dim == 1:
        j = np.flatnonzero(mask[:-1] & mask[1:])
        rm = 0.5 * (g.axis[j] + g.axis[j + 1])
        G = sp.csr_matrix((np.r_[-np.ones(j.size), np.ones(j.size)] / h,
                           (np.r_[np.arange(j.size), np.arange(j.size)], np.r_[j, j + 1])),
                          shape=(j.size, n))
        return (G.T @ sp.diags(4 * np.pi * rm**2 * h) @ G).tocsr()

    idx = np.arange(n).reshape(g.shape)
    da = m.diag_a
    pos = np.stack(g.coords, axis=-1)
    rows, cols, vals, wts = [], [], [], []
    nf = 0
    for ax in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[ax], hi[ax] = slice(0, -1), slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        ap, aq = da[ax][lo], da[ax][hi]
        k = 2 * ap * aq / (ap + aq)
        both = mask[lo] & mask[hi]
        cnt = int(both.sum())
        f_ids = nf + np.arange(cnt)
        rows += [f_ids, f_ids]
        cols += [idx[lo][both], idx[hi][both]]
        vals += [-np.ones(cnt) / h, np.ones(cnt) / h]
        wts.append(k[both] * h**3)
        nf += cnt
        if wall is not None:
            for src, dst, a, b in ((lo, hi, mask[lo], mask[hi]), (hi, lo, mask[hi], mask[lo])):
                one = a & ~b
                cnt = int(one.sum())
                if not cnt:
                    continue
                theta = _wall_fraction(pos[src][one], pos[dst][one], wall)
                f_ids = nf + np.arange(cnt)
                rows.append(f_ids); cols.append(idx[src][one]); vals.append(np.ones(cnt) / h)
                wts.append(k[one] / theta * h**3)
                nf += cnt
    G = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nf, n))
    Q = G.T @ sp.diags(np.concatenate(wts)) @ G
    if m.has_offdiag:
        inner = g.interior(np.ones(g.shape, bool), diagonal=True) & mask
        D = []
        for i in range(3):
            pl = np.roll(idx, -1, axis=i)[inner]
            mi = np.roll(idx, 1, axis=i)[inner]
            r = np.arange(pl.size)
            D.append(sp.csr_matrix((np.r_[np.ones(r.size), -np.ones(r.size)] / (2 * h),
                                    (np.r_[r, r], np.r_[pl, mi])), shape=(r.size, n)))
        for i in range(3):
            for jj in range(3):
                if i != jj:
                    Q = Q + D[i].T @ sp.diags(m.a[..., i, jj][inner] * h**3) @ D[jj]
    return Q.tocsr()


def local_energy(frame: np.ndarray, frame_dt: np.ndarray, m: MediumSpec,
                 wall: float | None = None, l2_term: bool = True) -> float:
    """``int_{B_R0} (c^-2 u_t^2 + a grad u . grad u + u^2) dx``.

    ``l2_term=False`` drops ``u^2`` and leaves the conserved wave energy.
    """
    g = m.grid
    mask = g.observation if wall is None else g.ball(wall)
    vol = g.volumes
    e = float(np.sum((m.weight * frame_dt**2 * vol)[mask]))
    u = frame.ravel()
    e += float(u @ (energy_form(m, wall) @ u))
    if l2_term:
        e += float(np.sum((frame**2 * vol)[mask]))
    return e


def _stop_index(E: np.ndarray, tail: float) -> int | None:
    peak_i = int(np.argmax(E))
    below = np.nonzero(E[peak_i:] < tail * E[peak_i])[0]
    return None if below.size == 0 else peak_i + int(below[0])


class _Accumulator:
    """Running trapezoid sums of ``t^k u`` and ``exp(-p t) u`` at step resolution."""

    def __init__(self, K: int, ps, shape, dt: float):
        self.K, self.ps, self.dt = K, tuple(complex(p) for p in ps), dt
        self.mom = [np.zeros(shape) for _ in range(K + 1)] if K > 0 else []
        self.lap = [np.zeros(shape, complex) for _ in self.ps]
        self.last = None

    def add(self, t: float, u: np.ndarray, w: float) -> None:
        if self.mom:
            tk = 1.0
            for k in range(self.K + 1):
                self.mom[k] += (w * tk) * u
                tk *= t
        for p, acc in zip(self.ps, self.lap):
            acc += (w * np.exp(-p * t)) * u
        self.last = (t, u)

    def finish(self) -> tuple[dict, dict]:
        if self.last is not None:
            self.add(self.last[0], self.last[1], -0.5 * self.dt)
        return dict(enumerate(self.mom)), dict(zip(self.ps, self.lap))


def simulate(cfg: WaveConfig) -> SimulationRecord:
    m = cfg.medium
    g = m.grid
    if g.dim != 3:
        raise ValueError("simulate needs a 3-D grid; use simulate_radial")
    f = np.asarray(cfg.initial.f, float)
    gv = cfg.initial.g
    support = g.omega if cfg.wall is None else g.ball(cfg.wall)
    cfg.initial.check(g, support)
    limit = cfl_limit(m)
    if cfg.dt is None:
        dt = limit
        if cfg.wall is not None:
            lam = spectral_bound(m, cfg.wall)
            dt = min(dt, CFL_SAFETY * 2 / np.sqrt(lam))
    else:
        dt = float(cfg.dt)
        if dt <= 0 or dt > limit * (1 + 1e-12):
            raise CFLError(f"dt={dt:.4g} violates the CFL limit {limit:.4g}")
        if cfg.wall is not None and dt * dt * spectral_bound(m, cfg.wall) >= 4:
            raise CFLError(f"dt={dt:.4g} is unstable for the wall operator")
    if cfg.record_stride < 1:
        raise ValueError("record_stride must be >= 1")

    L = (sp.diags(m.c.ravel() ** 2) @ operator(m, cfg.wall)).tocsr()
    if cfg.wall is None:
        width = cfg.sponge_width
        strength = cfg.sponge_strength
        if strength is None:
            strength = 10 * m.c0 / width
        half = 0.5 * dt * sponge_profile(g, width, strength).ravel()
    else:
        half = np.zeros(g.size)
    damp_p = 1.0 / (1.0 + half)
    damp_m = 1.0 - half

    faces = g.omega_faces
    win = g.window
    nsteps = int(np.ceil(cfg.T / dt - 1e-9))
    acc = _Accumulator(cfg.moment_K, cfg.laplace_p, f[win].shape, dt)

    u_prev = f.ravel().copy()
    Lu = L @ u_prev
    u = u_prev - 0.5 * dt * dt * Lu
    if gv is not None:
        u += dt * np.asarray(gv, float).ravel()
    v0 = np.zeros(g.size) if gv is None else np.asarray(gv, float).ravel()

    times, traces, energies, frames = [], [], [], []
    stop = "horizon"

    def sample(step: int, cur: np.ndarray, vel: np.ndarray) -> None:
        field3 = cur.reshape(g.shape)
        times.append(step * dt)
        traces.append(0.5 * (cur[faces.inner] + cur[faces.outer]))
        energies.append(local_energy(field3, vel.reshape(g.shape), m, cfg.wall))
        if cfg.record_interior:
            frames.append(field3[win].copy())

    acc.add(0.0, f[win], 0.5 * dt)
    sample(0, u_prev, v0)
    peak = energies[0]
    for step in range(1, nsteps + 1):
        Lu = L @ u
        u_next = damp_p * (2 * u - damp_m * u_prev - dt * dt * Lu)
        if step % 50 == 0 and not np.isfinite(u_next).all():
            raise SimulationError("non-finite field", step)
        acc.add(step * dt, u.reshape(g.shape)[win], dt)
        if step % cfg.record_stride == 0:
            sample(step, u, (u_next - u_prev) / (2 * dt))
            peak = max(peak, energies[-1])
            if cfg.adaptive and energies[-1] < cfg.energy_tail * peak:
                stop = "energy-tail"
                break
        u_prev, u = u, u_next
    if not np.isfinite(u).all():
        raise SimulationError("non-finite field", step)
    mom, lap = acc.finish()
    return SimulationRecord(
        g, m, cfg.initial, dt, cfg.record_stride, np.array(times), np.array(traces),
        faces.points, np.array(energies), win,
        np.array(frames) if cfg.record_interior else None, cfg.wall, mom, lap, stop)


def radial_trace(frames: np.ndarray, grid: GridSpec, radius: float | np.ndarray) -> np.ndarray:
    """Linear interpolation of radial frames at ``radius`` (scalar or array)."""
    r = grid.axis
    return np.stack([np.interp(radius, r, fr) for fr in frames])


def simulate_radial(cfg: RadialWaveConfig) -> SimulationRecord:
    m = cfg.medium
    g = m.grid
    if g.dim != 1:
        raise ValueError("simulate_radial needs a radial grid")
    if not m.identity_a:
        raise ValueError("the radial reduction requires a = identity")
    f = np.asarray(cfg.initial.f, float)
    cfg.initial.check(g, g.omega)
    gv = None if cfg.initial.g is None else np.asarray(cfg.initial.g, float)
    h, r = g.h, g.axis
    c = m.c
    limit = CFL_SAFETY * h / float(c.max())
    if cfg.dt is None:
        dt = limit
    else:
        dt = float(cfg.dt)
        if dt <= 0 or dt * float(c.max()) > h * (1 + 1e-12):
            raise CFLError(f"dt={dt:.4g} violates the CFL limit {h / float(c.max()):.4g}")
    lam2 = (c * dt / h) ** 2
    cb = float(c[-1]) * dt
    mur = (cb - h) / (cb + h)
    nsteps = int(np.ceil(cfg.T / dt - 1e-9))

    def to_u(v: np.ndarray) -> np.ndarray:
        u = np.empty_like(v)
        u[1:] = v[1:] / r[1:]
        u[0] = (4 * u[1] - u[2]) / 3
        return u

    def lap(v: np.ndarray) -> np.ndarray:
        d = np.zeros_like(v)
        d[1:-1] = v[2:] - 2 * v[1:-1] + v[:-2]
        return d

    v_prev = r * f
    v = v_prev + 0.5 * lam2 * lap(v_prev)
    if gv is not None:
        v += dt * r * gv
    v[0] = 0.0
    v[-1] = v_prev[-2] + mur * (v[-2] - v_prev[-1])
    acc = _Accumulator(cfg.moment_K, cfg.laplace_p, f.shape, dt)
    times, traces, energies, frames = [], [], [], []
    stop = "horizon"

    def sample(step, vv, vel):
        uu = to_u(vv)
        times.append(step * dt)
        traces.append([np.interp(g.R_omega, r, uu)])
        energies.append(local_energy(uu, to_u(vel) if vel is not None else np.zeros_like(uu), m))
        frames.append(uu)

    acc.add(0.0, f, 0.5 * dt)
    sample(0, v_prev, None if gv is None else r * gv)
    peak = energies[0]
    for step in range(1, nsteps + 1):
        v_next = 2 * v - v_prev + lam2 * lap(v)
        v_next[0] = 0.0
        v_next[-1] = v[-2] + mur * (v_next[-2] - v[-1])
        if step % 200 == 0 and not np.isfinite(v_next).all():
            raise SimulationError("non-finite field", step)
        acc.add(step * dt, to_u(v), dt)
        if step % cfg.record_stride == 0:
            sample(step, v, (v_next - v_prev) / (2 * dt))
            peak = max(peak, energies[-1])
            if cfg.adaptive and energies[-1] < cfg.energy_tail * peak:
                stop = "energy-tail"
                break
        v_prev, v = v, v_next
    mom, lap_ = acc.finish()
    return SimulationRecord(
        g, m, cfg.initial, dt, cfg.record_stride, np.array(times), np.array(traces),
        np.array([[g.R_omega]]), np.array(energies), (slice(None),), np.array(frames),
        None, mom, lap_, stop)


def fit_decay(rec: SimulationRecord, lo: float = 1e-10, hi: float = 1e-2) -> DecayFit:
    """Least-squares line through ``log E`` where ``E`` lies in ``[lo, hi] * peak``.

    ``C_hat`` is the prefactor of the fitted ``sqrt(E) ~ C exp(-delta t)``
    envelope, raised so that the envelope covers every sample of the window.
    """
    E = np.asarray(rec.energy_history, float)
    t = rec.times
    if E.size < 3 or not np.any(E > 0):
        raise ValueError("energy history is trivial")
    ip = int(np.argmax(E))
    peak = E[ip]
    tail_t, tail_e = t[ip:], E[ip:]
    sel = (tail_e >= lo * peak) & (tail_e <= hi * peak)
    extinct = bool(np.any(tail_e < lo * peak))
    if sel.sum() < 3:
        flag = "finite extinction" if extinct else "possibly trapping"
        return DecayFit(0.0, float(np.sqrt(peak)), (float(t[ip]), float(t[-1])), float("nan"), flag)
    x, y = tail_t[sel], np.log(tail_e[sel])
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ [slope, icpt] - y) ** 2)))
    delta = float(-slope / 2)
    logc = 0.5 * float(np.max(y - slope * x))
    flag = ""
    if delta <= 0:
        flag = "possibly trapping"
        delta = 0.0
    elif extinct or tail_e.min() <= 1e-20 * peak:
        # exponential decay keeps its slope across the window; a collapse steepens
        half = 0.5 * (x[0] + x[-1])
        early, late = x <= half, x > half
        if early.sum() >= 2 and late.sum() >= 2:
            s1 = np.polyfit(x[early], y[early], 1)[0]
            s2 = np.polyfit(x[late], y[late], 1)[0]
            if s2 < 3 * s1:
                flag = "finite extinction"
        if tail_e.min() <= 1e-20 * peak:
            flag = "finite extinction"
    return DecayFit(delta, float(np.exp(logc)), (float(x[0]), float(x[-1])), resid, flag)

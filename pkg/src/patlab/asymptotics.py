"""Low-frequency potential formulas for the moments when ``A = -Laplace``.

Writing ``rho = c^-2 f`` and ``q = c0^-2 - c^-2`` (supported in Omega), the
Laplace transform solves ``u_hat = G_p * (p rho + p^2 q u_hat)`` with
``G_p(x) = exp(-p|x|/c0) / (4 pi |x|)``.  Expanding ``G_p`` in ``p``,

    G_j(x) = (-1/c0)^j |x|^(j-1) / (4 pi j!),
    u^(n)  = G_(n-1) * rho + sum_j G_j * (q u^(n-2-j)),

which gives every formula below (``u^(1) = N[rho]``,
``u^(2) = -int rho / (4 pi c0)``, ...).  They are cross-checked against
simulated moments in the tests.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .elliptic import newtonian_potential
from .medium import MediumSpec
from .moments import sign_verdict

KMM_ZERO = 1e-8


def _require_laplacian(m: MediumSpec) -> None:
    if not m.identity_a:
        raise ValueError("potential formulas hold only for A = -Laplace (a = identity)")


def default_targets(m: MediumSpec) -> np.ndarray:
    """Boundary sample points of Omega (face midpoints; the sphere radius for radial grids)."""
    g = m.grid
    if g.dim == 1:
        return np.array([[g.R_omega]])
    return g.omega_faces.points


def kmm_value(m: MediumSpec, f: np.ndarray) -> float:
    """``int c^-2 f dx``."""
    return float(np.sum(m.weight * f * m.grid.volumes))


def power_potential(rho: np.ndarray, m: MediumSpec, targets: np.ndarray, power: int,
                    chunk: int = 256) -> np.ndarray:
    """``int |x - y|^(2 power) rho(y) dy`` at each target point ``x``."""
    g = m.grid
    vol = g.volumes
    targets = np.atleast_2d(np.asarray(targets, float))
    if g.dim == 1:
        x = np.linalg.norm(targets, axis=1)
        s = g.axis
        a = 2 * power
        out = np.empty(len(x))
        for i, r in enumerate(x):
            if r == 0:
                avg = s**a
            else:
                with np.errstate(divide="ignore", invalid="ignore"):
                    avg = ((r + s) ** (a + 2) - np.abs(r - s) ** (a + 2)) / (2 * r * s * (a + 2))
                avg[s == 0] = r**a
            out[i] = np.sum(avg * rho * vol)
        return out
    sel = np.flatnonzero(rho)
    if sel.size == 0:
        return np.zeros(len(targets))
    ys = np.stack([c.ravel()[sel] for c in g.coords], axis=1)
    w = rho.ravel()[sel] * vol.ravel()[sel]
    out = np.empty(len(targets))
    for s0 in range(0, len(targets), chunk):
        t = targets[s0:s0 + chunk]
        d2 = np.zeros((len(t), len(ys)))
        for ax in range(3):
            d2 += (t[:, ax, None] - ys[None, :, ax]) ** 2
        out[s0:s0 + chunk] = (d2**power) @ w
    return out


def u1_potential(m: MediumSpec, f: np.ndarray) -> np.ndarray:
    """``u^(1) = N[c^-2 f]`` on the cells of ``B_R0`` (zero elsewhere)."""
    _require_laplacian(m)
    rho = m.weight * f
    return newtonian_potential(rho, m.grid.observation, m.grid)


def u2_constant(m: MediumSpec, f: np.ndarray) -> float:
    """``u^(2) = -int c^-2 f / (4 pi c0)``, constant on ``B_R0``."""
    _require_laplacian(m)
    return -kmm_value(m, f) / (4 * np.pi * m.c0)


def _contrast(m: MediumSpec) -> np.ndarray:
    return m.c0**-2 - m.weight


def _potential_at(rho: np.ndarray, m: MediumSpec, targets: np.ndarray) -> np.ndarray:
    """Newtonian potential of ``rho`` at arbitrary points (direct sum, no self cell)."""
    g = m.grid
    if g.dim == 1:
        r = g.axis
        pot = newtonian_potential(rho, np.ones(g.shape, bool), g)
        return np.interp(np.linalg.norm(np.atleast_2d(targets), axis=1), r, pot)
    sel = np.flatnonzero(rho)
    if sel.size == 0:
        return np.zeros(len(targets))
    ys = np.stack([c.ravel()[sel] for c in g.coords], axis=1)
    w = rho.ravel()[sel] * g.h**3
    out = np.empty(len(targets))
    for s0 in range(0, len(targets), 256):
        t = targets[s0:s0 + 256]
        d2 = np.zeros((len(t), len(ys)))
        for ax in range(3):
            d2 += (t[:, ax, None] - ys[None, :, ax]) ** 2
        out[s0:s0 + 256] = (1.0 / (4 * np.pi * np.sqrt(d2))) @ w
    return out


def u4_boundary(m: MediumSpec, f: np.ndarray, targets: np.ndarray | None = None) -> np.ndarray:
    """``u^(4)`` at the boundary samples.

    ``u^(4) = -int |x-y|^2 rho / (24 pi c0^3) - int q u^(1) / (4 pi c0) + N[q u^(2)]``.
    """
    _require_laplacian(m)
    g = m.grid
    targets = default_targets(m) if targets is None else np.atleast_2d(targets)
    rho = m.weight * f
    q = _contrast(m)
    c0 = m.c0
    first = -power_potential(rho, m, targets, 1) / (24 * np.pi * c0**3)
    out = first
    if np.any(q):
        u1 = newtonian_potential(rho, q != 0, g)
        out = out - float(np.sum(q * u1 * g.volumes)) / (4 * np.pi * c0)
        u2 = u2_constant(m, f)
        if u2 != 0:
            out = out + u2 * _potential_at(q, m, targets)
    return out


def h_function(m: MediumSpec, f: np.ndarray, targets: np.ndarray | None = None) -> np.ndarray:
    """``h(x) = int |x-y|^2 rho dy + c0^2 int q(y) N[rho](y) dy`` at the boundary samples.

    The double integral is nested: the inner potential is evaluated only on
    the support of ``q``.
    """
    _require_laplacian(m)
    g = m.grid
    targets = default_targets(m) if targets is None else np.atleast_2d(targets)
    rho = m.weight * f
    q = _contrast(m)
    out = power_potential(rho, m, targets, 1)
    if np.any(q):
        inner = newtonian_potential(rho, q != 0, g)
        out = out + m.c0**2 * float(np.sum(q * inner * g.volumes))
    return out


def h_from_u4(m: MediumSpec, u4: np.ndarray) -> np.ndarray:
    """``-4 c0^3 pi u^(4)``: the boundary function whose sign decides the k0 = 2 regime."""
    return -4 * m.c0**3 * np.pi * u4


def g_general(m: MediumSpec, f: np.ndarray, k0: int, lower_moments: dict,
              targets: np.ndarray | None = None) -> np.ndarray:
    """``g = int t^(2 k0) u dt = (2 k0)! u^(2 k0)`` on the boundary samples.

    ``lower_moments`` maps odd ``2k+1`` (``k = 0..k0-2``) to moment fields.
    Even moments below ``2 k0`` are taken to vanish on Omega.
    """
    _require_laplacian(m)
    if k0 < 1:
        raise ValueError("k0 must be >= 1")
    need = [2 * k + 1 for k in range(k0 - 1)]
    missing = [j for j in need if j not in lower_moments]
    if missing:
        raise ValueError(f"missing lower moments {missing}")
    targets = default_targets(m) if targets is None else np.atleast_2d(targets)
    rho = m.weight * f
    q = _contrast(m)
    c0 = m.c0
    j = 2 * k0 - 1
    u = -power_potential(rho, m, targets, k0 - 1) / (4 * np.pi * c0**j * math.factorial(j))
    for k in range(k0 - 1):
        jj = 2 * (k0 - k) - 3
        src = q * lower_moments[2 * k + 1]
        if np.any(src):
            u = u - power_potential(src, m, targets, k0 - k - 2) / (4 * np.pi * c0**jj * math.factorial(jj))
    return math.factorial(2 * k0) * u


@dataclass
class PotentialMoments:
    u1: np.ndarray
    u2_const: float
    u4_boundary: np.ndarray
    kmm_value: float
    k0_predicted: int | str


@dataclass
class RegimeReport:
    regime: str
    k0_predicted: int | str
    kmm_value: float
    h_values: np.ndarray
    h_sign: str
    u4_values: np.ndarray
    u4_sign: str

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample", "h", "u4"])
            for i, (a, b) in enumerate(zip(self.h_values, self.u4_values)):
                w.writerow([i, repr(float(a)), repr(float(b))])


def _kmm_zero(m: MediumSpec, f: np.ndarray, kmm: float) -> bool:
    l1 = float(np.sum(np.abs(m.weight * f) * m.grid.volumes))
    return abs(kmm) <= KMM_ZERO * l1


def classify_sign_regime(m: MediumSpec, f: np.ndarray, targets: np.ndarray | None = None,
                         eps_sign: float = 1e-2) -> RegimeReport:
    """Which sufficient condition holds: (i) kmm != 0, (ii) kmm = 0 and the
    k0 = 2 boundary function has one sign, (iii) neither.

    The verdict in (ii) uses ``u^(4)`` on the boundary; ``h_sign`` reports the
    sign of ``h`` itself alongside.
    """
    _require_laplacian(m)
    kmm = kmm_value(m, f)
    empty = np.zeros(0)
    if not np.any(f):
        return RegimeReport("degenerate", "unknown", 0.0, empty, "zero", empty, "zero")
    if not _kmm_zero(m, f, kmm):
        return RegimeReport("i", 1, kmm, empty, "", empty, "")
    h = h_function(m, f, targets)
    u4 = u4_boundary(m, f, targets)
    hs = sign_verdict(h, eps_sign)
    us = sign_verdict(u4, eps_sign)
    if us in ("positive", "negative"):
        return RegimeReport("ii", 2, kmm, h, hs, u4, us)
    return RegimeReport("iii", "unknown", kmm, h, hs, u4, us)


def potential_moments(m: MediumSpec, f: np.ndarray, targets: np.ndarray | None = None) -> PotentialMoments:
    kmm = kmm_value(m, f)
    u4 = u4_boundary(m, f, targets)
    if not np.any(f):
        k0: int | str = "unknown"
    elif not _kmm_zero(m, f, kmm):
        k0 = 1
    elif np.any(np.abs(u4) > 0):
        k0 = 2
    else:
        k0 = "unknown"
    return PotentialMoments(u1_potential(m, f), u2_constant(m, f), u4, kmm, k0)

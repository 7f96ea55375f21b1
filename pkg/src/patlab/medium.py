"""Sound-speed media, coefficient tensors and their admissibility checks."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import ndimage

from .grid import GridSpec


@dataclass(frozen=True, eq=False)
class MediumSpec:
    """Speed ``c``, coefficient tensor ``a`` and the region partition.

    ``a`` is ``None`` for the identity tensor (the operator is then ``-Laplace``),
    otherwise an array of shape ``grid.shape + (3, 3)``.  ``regions`` holds
    boolean cell masks ``K_1..K_N``.
    """

    grid: GridSpec
    c: np.ndarray
    c0: float
    r1_lower: float = 0.1
    a: np.ndarray | None = None
    R1: float | None = None
    regions: tuple[np.ndarray, ...] = ()
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def identity_a(self) -> bool:
        return self.a is None

    @property
    def diag_a(self) -> np.ndarray:
        """Diagonal entries ``a_ii`` with shape ``(3,) + grid.shape``."""
        if self.a is None:
            return np.ones((3,) + self.grid.shape)
        return np.stack([self.a[..., i, i] for i in range(3)])

    @property
    def has_offdiag(self) -> bool:
        if self.a is None:
            return False
        return bool(np.any(self.a[..., 0, 1]) or np.any(self.a[..., 0, 2])
                    or np.any(self.a[..., 1, 2]))

    @property
    def weight(self) -> np.ndarray:
        """``c**-2``, the mass density of the wave operator."""
        return self.c ** -2.0

    def with_speed(self, c: np.ndarray, **kw) -> "MediumSpec":
        return MediumSpec(self.grid, c, kw.pop("c0", self.c0), kw.pop("r1_lower", self.r1_lower),
                          self.a, self.R1, kw.pop("regions", self.regions), kw.pop("meta", {}))


@dataclass
class MediumRecipe:
    """Declarative description of a medium.

    kinds: ``uniform``, ``piecewise`` (balls ``[(center, radius, value)]``),
    ``radial-layers`` (``[(r_outer, value)]``, innermost first), ``bump``
    (smooth perturbation), ``trapping-well`` (slow annulus),
    ``harmonic-factor`` (``c = c0 + psi*h`` with discrete-harmonic ``psi``).
    A ``tensor`` entry adds a rotated diagonal anisotropy inside ``R1``.
    """

    kind: str = "uniform"
    params: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class Violation:
    invariant: str
    cell: int | None
    detail: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)
    b: float | None = None

    def __bool__(self) -> bool:  # truthy when something is wrong
        return bool(self.violations)

    def __len__(self) -> int:
        return len(self.violations)

    def add(self, invariant: str, cell, detail: str) -> None:
        self.violations.append(Violation(invariant, None if cell is None else int(cell), detail))


def smooth_bump(r: np.ndarray, radius: float) -> np.ndarray:
    """C-infinity bump equal to 1 at r=0 and vanishing for r >= radius."""
    s = np.clip(np.asarray(r, float) / radius, 0.0, 1.0)
    out = np.zeros_like(s)
    inside = s < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return out


def _dist(grid: GridSpec, center) -> np.ndarray:
    if grid.dim == 1:
        return grid.r
    center = np.asarray(center, float)
    return np.sqrt(sum((x - c) ** 2 for x, c in zip(grid.coords, center)))


def _rotation(angles) -> np.ndarray:
    ax, ay, az = angles
    rx = np.array([[1, 0, 0], [0, np.cos(ax), -np.sin(ax)], [0, np.sin(ax), np.cos(ax)]])
    ry = np.array([[np.cos(ay), 0, np.sin(ay)], [0, 1, 0], [-np.sin(ay), 0, np.cos(ay)]])
    rz = np.array([[np.cos(az), -np.sin(az), 0], [np.sin(az), np.cos(az), 0], [0, 0, 1]])
    return rz @ ry @ rx


def build_tensor(grid: GridSpec, R1: float, diag=(1.5, 1.0, 0.7), angles=(0.3, 0.2, 0.1),
                 amplitude: float = 1.0) -> np.ndarray:
    """``a = I + s(x)(R D R^T - I)`` with ``s`` a smooth bump supported in ``|x| < R1``."""
    if grid.dim != 3:
        raise ValueError("anisotropic tensors need a 3-D grid")
    rot = _rotation(angles)
    target = rot @ np.diag(diag) @ rot.T
    target = 0.5 * (target + target.T)
    s = amplitude * smooth_bump(grid.r, R1)
    a = np.broadcast_to(np.eye(3), grid.shape + (3, 3)).copy()
    a += s[..., None, None] * (target - np.eye(3))
    return a


def build_medium(recipe: MediumRecipe, grid: GridSpec) -> MediumSpec:
    p = dict(recipe.params)
    c0 = float(p.pop("c0", 1.0))
    r1_lower = float(p.pop("r1_lower", 0.1))
    tensor = p.pop("tensor", None)
    R1 = float(p.pop("R1", grid.R_omega))
    c = np.full(grid.shape, c0)
    regions: list[np.ndarray] = []
    meta: dict[str, Any] = {"recipe": recipe.kind}
    kind = recipe.kind

    if kind == "uniform":
        pass
    elif kind == "piecewise":
        for center, radius, value in p.pop("balls"):
            k = _dist(grid, center) <= radius
            if not k.any():
                raise ValueError(f"region at {center} with radius {radius} contains no cell")
            c[k] = value
            regions.append(k)
    elif kind == "radial-layers":
        prev = 0.0
        for r_outer, value in p.pop("layers"):
            k = (grid.r >= prev) & (grid.r < r_outer)
            c[k] = value
            prev = r_outer
    elif kind == "bump":
        amp = float(p.pop("amplitude", 0.2))
        width = float(p.pop("width", 0.8))
        center = p.pop("center", (0.0, 0.0, 0.0))
        c = c + amp * smooth_bump(_dist(grid, center), width)
    elif kind == "trapping-well":
        depth = float(p.pop("depth", 0.8))
        r_in, r_out = p.pop("annulus", (0.4, 0.8))
        mid, half = 0.5 * (r_in + r_out), 0.5 * (r_out - r_in)
        c = c - depth * c0 * smooth_bump(np.abs(grid.r - mid), half)
    elif kind == "harmonic-factor":
        from .elliptic import harmonic_extension

        amp = float(p.pop("amplitude", -0.2))
        width = float(p.pop("width", 0.8))
        label = p.pop("psi", "x1")
        base = MediumSpec(grid, c.copy(), c0, r1_lower,
                          None if tensor is None else build_tensor(grid, R1, **tensor), R1)
        psi = harmonic_extension(base, label)
        hfun = amp * smooth_bump(_dist(grid, p.pop("center", (0.0, 0.0, 0.0))), width)
        c = c + psi * hfun
        meta.update(psi=psi, h=hfun, base_c0=c0)
    else:
        raise ValueError(f"unknown medium recipe {kind!r}")
    if p:
        raise ValueError(f"unused recipe parameters: {sorted(p)}")

    a = None if tensor is None else build_tensor(grid, R1, **tensor)
    m = MediumSpec(grid, c, c0, r1_lower, a, R1, tuple(regions), meta)
    report = validate_medium(m)
    hard = [v for v in report.violations if v.invariant in ("speed-lower-bound", "exterior-constant")]
    if hard:
        raise ValueError(f"recipe {kind!r} violates: {hard[0].invariant} ({hard[0].detail})")
    return m


def sym3_eigvalsh(a: np.ndarray) -> np.ndarray:
    """Closed-form ascending eigenvalues of symmetric 3x3 matrices (last two axes)."""
    a11, a22, a33 = a[..., 0, 0], a[..., 1, 1], a[..., 2, 2]
    a12, a13, a23 = a[..., 0, 1], a[..., 0, 2], a[..., 1, 2]
    q = (a11 + a22 + a33) / 3
    p1 = a12**2 + a13**2 + a23**2
    p2 = (a11 - q) ** 2 + (a22 - q) ** 2 + (a33 - q) ** 2 + 2 * p1
    p = np.sqrt(p2 / 6)
    safe = np.where(p > 0, p, 1.0)
    b11, b22, b33 = (a11 - q) / safe, (a22 - q) / safe, (a33 - q) / safe
    b12, b13, b23 = a12 / safe, a13 / safe, a23 / safe
    detb = (b11 * (b22 * b33 - b23 * b23) - b12 * (b12 * b33 - b23 * b13)
            + b13 * (b12 * b23 - b22 * b13))
    phi = np.arccos(np.clip(detb / 2, -1, 1)) / 3
    e3 = q + 2 * p * np.cos(phi)
    e1 = q + 2 * p * np.cos(phi + 2 * np.pi / 3)
    e2 = 3 * q - e1 - e3
    out = np.stack([e1, e2, e3], axis=-1)
    return np.where((p > 0)[..., None], out, q[..., None])


def validate_medium(m: MediumSpec) -> ValidationReport:
    g = m.grid
    rep = ValidationReport()
    c = m.c
    if c.shape != g.shape:
        rep.add("shape", None, f"c has shape {c.shape}, grid {g.shape}")
        return rep
    bad = ~np.isfinite(c)
    for i in np.flatnonzero(bad)[:10]:
        rep.add("finite", i, "non-finite speed")
    low = np.isfinite(c) & (c < m.r1_lower)
    if m.r1_lower <= 0:
        rep.add("speed-lower-bound", None, f"r1_lower={m.r1_lower} is not positive")
    for i in np.flatnonzero(low)[:10]:
        rep.add("speed-lower-bound", i, f"c={c.flat[i]:.4g} < r1={m.r1_lower}")
    ext = ~g.omega & np.isfinite(c) & (c != m.c0)
    for i in np.flatnonzero(ext)[:10]:
        rep.add("exterior-constant", i, f"c={c.flat[i]:.6g} != c0={m.c0} outside Omega")

    if m.a is not None:
        a = m.a
        asym = np.abs(a - np.swapaxes(a, -1, -2)).max(axis=(-1, -2))
        for i in np.flatnonzero(asym > 0)[:10]:
            rep.add("tensor-symmetry", i, f"|a_ij - a_ji| = {asym.flat[i]:.3g}")
        eig = sym3_eigvalsh(0.5 * (a + np.swapaxes(a, -1, -2)))[..., 0]
        rep.b = float(eig.min())
        for i in np.flatnonzero(eig <= 0)[:10]:
            rep.add("ellipticity", i, f"smallest eigenvalue {eig.flat[i]:.3g} <= 0")
        R1 = m.R1 if m.R1 is not None else g.R_omega
        if R1 >= g.R0:
            rep.add("tensor-identity-radius", None, f"R1={R1} not below R0={g.R0}")
        dev = np.abs(a - np.eye(3)).max(axis=(-1, -2))
        for i in np.flatnonzero((g.r > R1) & (dev > 0))[:10]:
            rep.add("tensor-identity-radius", i, f"a != I at |x| > R1={R1}")
    else:
        rep.b = 1.0

    if m.regions:
        total = np.zeros(g.shape, int)
        for j, k in enumerate(m.regions):
            if not k.any():
                rep.add("region-nonempty", None, f"K_{j + 1} is empty")
            outside = k & ~g.omega
            for i in np.flatnonzero(outside)[:3]:
                rep.add("region-in-omega", i, f"K_{j + 1} leaves Omega")
            total += k
        for i in np.flatnonzero(total > 1)[:10]:
            rep.add("region-disjoint", i, "cell belongs to several regions")
        comp = g.observation & (total == 0)
        if count_components(comp) != 1:
            rep.add("complement-connected", None, "B_R0 minus the regions is not connected")
    return rep


def count_components(mask: np.ndarray) -> int:
    """Face-connected components of a cell set."""
    structure = ndimage.generate_binary_structure(mask.ndim, 1)
    _, n = ndimage.label(mask, structure=structure)
    return int(n)


def flood_fill_components(mask: np.ndarray) -> int:
    """Breadth-first component count; slow reference for ``count_components``."""
    seen = np.zeros(mask.shape, bool)
    count = 0
    shape = mask.shape
    steps = []
    for ax in range(mask.ndim):
        for s in (1, -1):
            d = [0] * mask.ndim
            d[ax] = s
            steps.append(tuple(d))
    for start in zip(*np.nonzero(mask)):
        if seen[start]:
            continue
        count += 1
        seen[start] = True
        queue = deque([start])
        while queue:
            cur = queue.popleft()
            for d in steps:
                nb = tuple(ci + di for ci, di in zip(cur, d))
                if all(0 <= v < s for v, s in zip(nb, shape)) and mask[nb] and not seen[nb]:
                    seen[nb] = True
                    queue.append(nb)
    return count


def weighted_inner_product(u: np.ndarray, v: np.ndarray, m: MediumSpec) -> float:
    """``sum u v c^-2 dV`` over the cells of B_R0."""
    if u.shape != m.grid.shape or v.shape != m.grid.shape:
        raise ValueError("field shape does not match the medium grid")
    g = m.grid
    w = g.volumes * m.weight * g.observation
    return np.sum(u * np.conj(v) * w)

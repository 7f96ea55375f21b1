"""Uniform grids and geometric predicates.

Two grid flavours share one type:

* ``dim == 3``: ``n**3`` cubic cells of side ``h`` centred on the origin,
  covering ``[-n*h/2, n*h/2]**3``.
* ``dim == 1``: the radial reduction, ``n + 1`` nodes ``r_j = j*h`` on
  ``[0, n*h]``.  Fields are functions of ``r`` only; quadrature weights are
  the spherical shell volumes ``4*pi*r**2*h``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    dim: int
    n: int
    h: float
    R0: float = 1.5
    R_sim: float = 3.0
    R_omega: float = 1.0
    omega_shape: str = "ball"

    def __post_init__(self):
        if self.dim not in (1, 3):
            raise ValueError(f"dim must be 1 or 3, got {self.dim}")
        if self.omega_shape not in ("ball", "box"):
            raise ValueError(f"unknown omega_shape {self.omega_shape!r}")
        if not (0 < self.R_omega < self.R0 < self.R_sim):
            raise ValueError("need 0 < R_omega < R0 < R_sim")
        extent = self.n * self.h if self.dim == 1 else self.n * self.h / 2
        if extent < self.R_sim * (1 - 1e-12):
            raise ValueError(f"grid extent {extent} does not cover R_sim={self.R_sim}")
        if self.omega_shape == "box" and self.R_omega * np.sqrt(3) >= self.R0:
            raise ValueError("box Omega must lie strictly inside B_R0")

    @classmethod
    def cube(cls, n: int, R_sim: float = 3.0, **kw) -> "GridSpec":
        """3-D grid with ``n`` cells per axis spanning ``[-R_sim, R_sim]``."""
        return cls(dim=3, n=n, h=2 * R_sim / n, R_sim=R_sim, **kw)

    @classmethod
    def radial(cls, n: int, R_sim: float = 3.0, **kw) -> "GridSpec":
        return cls(dim=1, n=n, h=R_sim / n, R_sim=R_sim, **kw)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n + 1,) if self.dim == 1 else (self.n,) * 3

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def axis(self) -> np.ndarray:
        if self.dim == 1:
            return np.arange(self.n + 1) * self.h
        return (np.arange(self.n) + 0.5) * self.h - self.n * self.h / 2

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        if self.dim == 1:
            return (self.axis,)
        return tuple(np.meshgrid(self.axis, self.axis, self.axis, indexing="ij"))

    @cached_property
    def r(self) -> np.ndarray:
        if self.dim == 1:
            return self.axis
        x, y, z = self.coords
        return np.sqrt(x * x + y * y + z * z)

    @cached_property
    def volumes(self) -> np.ndarray:
        """Quadrature weight of each cell (node, for the radial grid)."""
        if self.dim == 1:
            return 4 * np.pi * self.axis**2 * self.h
        return np.full(self.shape, self.h**3)

    def ball(self, radius: float) -> np.ndarray:
        return self.r < radius

    @cached_property
    def observation(self) -> np.ndarray:
        """Cells of B_R0."""
        return self.ball(self.R0)

    @cached_property
    def omega(self) -> np.ndarray:
        if self.dim == 1 or self.omega_shape == "ball":
            return self.r < self.R_omega
        x, y, z = self.coords
        return np.maximum(np.maximum(abs(x), abs(y)), abs(z)) < self.R_omega

    def interior(self, mask: np.ndarray, diagonal: bool = False) -> np.ndarray:
        """Cells of ``mask`` whose whole stencil lies in ``mask``.

        ``diagonal`` widens the stencil to the 19-point (edge-neighbour) one.
        """
        if self.dim == 1:
            out = mask.copy()
            out[1:] &= mask[:-1]
            out[:-1] &= mask[1:]
            out[0] = out[-1] = False
            return out
        out = mask.copy()
        out[0, :, :] = out[-1, :, :] = False
        out[:, 0, :] = out[:, -1, :] = False
        out[:, :, 0] = out[:, :, -1] = False
        for ax in range(3):
            out &= np.roll(mask, 1, axis=ax) & np.roll(mask, -1, axis=ax)
        if diagonal:
            for a in range(3):
                for b in range(a + 1, 3):
                    for sa in (1, -1):
                        for sb in (1, -1):
                            out &= np.roll(np.roll(mask, sa, axis=a), sb, axis=b)
        return out

    @cached_property
    def window(self) -> tuple[slice, ...]:
        """Index box covering B_R0 plus a one-cell margin."""
        if self.dim == 1:
            k = min(int(np.searchsorted(self.axis, self.R0)) + 2, self.n + 1)
            return (slice(0, k),)
        idx = np.nonzero(np.abs(self.axis) < self.R0 + 1.5 * self.h)[0]
        lo, hi = max(idx[0] - 1, 0), min(idx[-1] + 2, self.n)
        return (slice(lo, hi),) * 3

    @cached_property
    def omega_faces(self) -> "FaceSet":
        return boundary_faces(self, self.omega)


@dataclass(frozen=True)
class FaceSet:
    """Faces separating ``inside`` cells from outside ones.

    ``inner``/``outer`` are flat cell indices, ``normal_axis``/``sign`` give
    the outward normal, ``points`` the face midpoints.
    """

    inner: np.ndarray
    outer: np.ndarray
    normal_axis: np.ndarray
    sign: np.ndarray
    points: np.ndarray

    def __len__(self) -> int:
        return len(self.inner)


def boundary_faces(grid: GridSpec, inside: np.ndarray) -> FaceSet:
    if grid.dim == 1:
        j = int(np.nonzero(inside)[0].max())
        return FaceSet(np.array([j]), np.array([j + 1]), np.array([0]), np.array([1]),
                       np.array([[0.5 * (grid.axis[j] + grid.axis[j + 1])]]))
    flat = np.arange(grid.size).reshape(grid.shape)
    inner, outer, axes, signs, pts = [], [], [], [], []
    for ax in range(3):
        for s in (1, -1):
            nb = np.roll(inside, -s, axis=ax)
            edge = [slice(None)] * 3
            edge[ax] = -1 if s == 1 else 0
            nb_valid = np.ones(grid.shape, bool)
            nb_valid[tuple(edge)] = False
            sel = inside & ~nb & nb_valid
            i = flat[sel]
            o = np.roll(flat, -s, axis=ax)[sel]
            inner.append(i)
            outer.append(o)
            axes.append(np.full(i.shape, ax))
            signs.append(np.full(i.shape, s))
            p = np.stack([c[sel] for c in grid.coords], axis=1)
            p[:, ax] += s * grid.h / 2
            pts.append(p)
    order = np.argsort(np.concatenate(inner), kind="stable")
    cat = lambda xs: np.concatenate(xs)[order]
    return FaceSet(cat(inner), cat(outer), cat(axes), cat(signs),
                   np.concatenate(pts)[order])

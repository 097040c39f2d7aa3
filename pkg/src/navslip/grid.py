"""Rectangular staggered (MAC) grids, control masks and time grids.

Layout
------
Pressure lives at cell centres, ``u_x`` on vertical faces and ``u_y`` on
horizontal faces.  Along the direction normal to its faces a velocity
component sits on the grid *nodes* ``0, h, ..., L``; across that direction it
sits on the cell centres, extended by one point on each wall carrying the
tangential boundary value (the "trace" rows).  Trace points have zero volume
weight: they only enter through the strain tensor and the boundary integrals.

So for a closed box ``u_x`` is stored as an ``(nx + 1, ny + 2)`` array and
``u_y`` as ``(nx + 2, ny + 1)``; with ``periodic_x`` the x-direction wraps and
the shapes become ``(nx, ny + 2)`` and ``(nx, ny + 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Axis:
    """One coordinate direction of the staggered grid."""

    length: float
    n: int
    periodic: bool = False

    @property
    def h(self) -> float:
        return self.length / self.n

    @property
    def n_nodes(self) -> int:
        return self.n if self.periodic else self.n + 1

    @property
    def n_ext(self) -> int:
        return self.n if self.periodic else self.n + 2

    @cached_property
    def node_pos(self) -> np.ndarray:
        return np.arange(self.n_nodes) * self.h

    @cached_property
    def ext_pos(self) -> np.ndarray:
        centres = (np.arange(self.n) + 0.5) * self.h
        if self.periodic:
            return centres
        return np.concatenate([[0.0], centres, [self.length]])

    @cached_property
    def node_weight(self) -> np.ndarray:
        w = np.full(self.n_nodes, self.h)
        if not self.periodic:
            w[0] = w[-1] = 0.5 * self.h
        return w

    @cached_property
    def ext_weight(self) -> np.ndarray:
        w = np.full(self.n_ext, self.h)
        if not self.periodic:
            w[0] = w[-1] = 0.0
        return w

    @cached_property
    def boundary_node(self) -> np.ndarray:
        mask = np.zeros(self.n_nodes, dtype=bool)
        if not self.periodic:
            mask[[0, -1]] = True
        return mask

    @cached_property
    def wall_ext(self) -> np.ndarray:
        mask = np.zeros(self.n_ext, dtype=bool)
        if not self.periodic:
            mask[[0, -1]] = True
        return mask

    def cell_ext(self, k):
        """Extended-centre index of cell ``k``."""
        return k if self.periodic else k + 1

    def ext_around_node(self, m):
        """Extended centres immediately below/above node ``m``."""
        m = np.asarray(m)
        if self.periodic:
            return (m - 1) % self.n, m
        return m, m + 1

    def nodes_around_ext(self, e):
        """Nodes bracketing an interior (cell) extended centre ``e``."""
        e = np.asarray(e)
        if self.periodic:
            return e, (e + 1) % self.n
        return e - 1, e

    def wrap_node(self, m):
        return np.asarray(m) % self.n if self.periodic else np.asarray(m)

    def wrap_ext(self, e):
        return np.asarray(e) % self.n if self.periodic else np.asarray(e)

    def ext_span(self, lo, hi):
        """Distance between extended centres ``lo`` < ``hi`` (possibly wrapped)."""
        if self.periodic:
            return (np.asarray(hi) - np.asarray(lo)) * self.h
        return self.ext_pos[hi] - self.ext_pos[lo]

    # 1D difference/restriction operators --------------------------------
    @cached_property
    def node_to_cell_diff(self) -> sp.csr_matrix:
        k = np.arange(self.n)
        hi = self.wrap_node(k + 1)
        rows = np.concatenate([k, k])
        cols = np.concatenate([hi, k])
        vals = np.concatenate([np.full(self.n, 1.0), np.full(self.n, -1.0)]) / self.h
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n_nodes))

    @cached_property
    def ext_to_cell(self) -> sp.csr_matrix:
        k = np.arange(self.n)
        return sp.csr_matrix(
            (np.ones(self.n), (k, self.cell_ext(k))), shape=(self.n, self.n_ext)
        )

    @cached_property
    def ext_to_node_diff(self) -> sp.csr_matrix:
        m = np.arange(self.n_nodes)
        lo, hi = self.ext_around_node(m)
        gap = np.full(self.n_nodes, self.h)
        if not self.periodic:
            gap = self.ext_pos[hi] - self.ext_pos[lo]
        rows = np.concatenate([m, m])
        cols = np.concatenate([hi, lo])
        vals = np.concatenate([1.0 / gap, -1.0 / gap])
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n_nodes, self.n_ext))


class BoundaryFace(NamedTuple):
    index: int
    side: str
    normal: tuple[float, float]
    tangent: tuple[float, float]
    length: float
    midpoint: tuple[float, float]


_SIDE_NORMALS = {
    "bottom": (0.0, -1.0),
    "right": (1.0, 0.0),
    "top": (0.0, 1.0),
    "left": (-1.0, 0.0),
}


def _rotate90(v):
    return (-v[1] + 0.0, v[0] + 0.0)


@dataclass(frozen=True)
class Grid:
    extent: tuple[float, float]
    resolution: tuple[int, int]
    periodic_x: bool = False

    @property
    def h(self) -> tuple[float, float]:
        return (self.extent[0] / self.resolution[0], self.extent[1] / self.resolution[1])

    @property
    def nx(self) -> int:
        return self.resolution[0]

    @property
    def ny(self) -> int:
        return self.resolution[1]

    @cached_property
    def xaxis(self) -> Axis:
        return Axis(self.extent[0], self.nx, self.periodic_x)

    @cached_property
    def yaxis(self) -> Axis:
        return Axis(self.extent[1], self.ny, False)

    @property
    def area(self) -> float:
        return self.extent[0] * self.extent[1]

    @property
    def cell_area(self) -> float:
        return self.h[0] * self.h[1]

    # shapes and flat numbering --------------------------------------------
    @property
    def ux_shape(self) -> tuple[int, int]:
        return (self.xaxis.n_nodes, self.yaxis.n_ext)

    @property
    def uy_shape(self) -> tuple[int, int]:
        return (self.xaxis.n_ext, self.yaxis.n_nodes)

    @property
    def nux(self) -> int:
        return self.ux_shape[0] * self.ux_shape[1]

    @property
    def nuy(self) -> int:
        return self.uy_shape[0] * self.uy_shape[1]

    @property
    def nu(self) -> int:
        return self.nux + self.nuy

    @property
    def np(self) -> int:
        return self.nx * self.ny

    def ux_index(self, i, r):
        return np.asarray(i) * self.ux_shape[1] + np.asarray(r)

    def uy_index(self, s, j):
        return self.nux + np.asarray(s) * self.uy_shape[1] + np.asarray(j)

    def split(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """View a flat velocity vector as its ``(ux, uy)`` arrays."""
        return v[: self.nux].reshape(self.ux_shape), v[self.nux :].reshape(self.uy_shape)

    def join(self, ux: np.ndarray, uy: np.ndarray) -> np.ndarray:
        return np.concatenate([np.ravel(ux), np.ravel(uy)])

    # per-dof geometry -----------------------------------------------------
    @cached_property
    def velocity_positions(self) -> np.ndarray:
        X, Y = np.meshgrid(self.xaxis.node_pos, self.yaxis.ext_pos, indexing="ij")
        Xy, Yy = np.meshgrid(self.xaxis.ext_pos, self.yaxis.node_pos, indexing="ij")
        return np.column_stack([self.join(X, Xy), self.join(Y, Yy)])

    @cached_property
    def component(self) -> np.ndarray:
        return np.concatenate([np.zeros(self.nux, dtype=int), np.ones(self.nuy, dtype=int)])

    @cached_property
    def mass(self) -> np.ndarray:
        """Midpoint-rule volume weight of each velocity dof."""
        wx = np.outer(self.xaxis.node_weight, self.yaxis.ext_weight)
        wy = np.outer(self.xaxis.ext_weight, self.yaxis.node_weight)
        return self.join(wx, wy)

    @cached_property
    def is_normal(self) -> np.ndarray:
        """Dofs carrying the normal velocity on a wall (always zero here)."""
        nx_ = np.broadcast_to(self.xaxis.boundary_node[:, None], self.ux_shape)
        ny_ = np.broadcast_to(self.yaxis.boundary_node[None, :], self.uy_shape)
        return self.join(nx_, ny_)

    @cached_property
    def is_trace(self) -> np.ndarray:
        """Tangential wall dofs, corners excluded (there the value is normal for the other wall)."""
        tx = np.broadcast_to(self.yaxis.wall_ext[None, :], self.ux_shape)
        ty = np.broadcast_to(self.xaxis.wall_ext[:, None], self.uy_shape)
        return self.join(tx, ty) & ~self.is_normal

    @cached_property
    def trace_weight(self) -> np.ndarray:
        """Wall length attached to each tangential trace dof (corners get half a cell per wall)."""
        tx = np.outer(self.xaxis.node_weight, self.yaxis.wall_ext.astype(float))
        ty = np.outer(self.xaxis.wall_ext.astype(float), self.yaxis.node_weight)
        return self.join(tx, ty)

    @cached_property
    def trace_sides(self) -> dict[str, np.ndarray]:
        """Flat velocity indices of the tangential trace on each wall, corners included."""
        sides = {}
        if not self.yaxis.periodic:
            i = np.arange(self.xaxis.n_nodes)
            sides["bottom"] = self.ux_index(i, 0)
            sides["top"] = self.ux_index(i, self.yaxis.n_ext - 1)
        if not self.xaxis.periodic:
            j = np.arange(self.yaxis.n_nodes)
            sides["left"] = self.uy_index(0, j)
            sides["right"] = self.uy_index(self.xaxis.n_ext - 1, j)
        return sides

    @cached_property
    def boundary_faces(self) -> tuple[BoundaryFace, ...]:
        Lx, Ly = self.extent
        hx, hy = self.h
        faces = []

        def add(side, length, mid):
            nrm = _SIDE_NORMALS[side]
            faces.append(BoundaryFace(len(faces), side, nrm, _rotate90(nrm), length, mid))

        for k in range(self.nx):
            add("bottom", hx, ((k + 0.5) * hx, 0.0))
        if not self.periodic_x:
            for k in range(self.ny):
                add("right", hy, (Lx, (k + 0.5) * hy))
        for k in reversed(range(self.nx)):
            add("top", hx, ((k + 0.5) * hx, Ly))
        if not self.periodic_x:
            for k in reversed(range(self.ny)):
                add("left", hy, (0.0, (k + 0.5) * hy))
        return tuple(faces)

    @property
    def boundary_length(self) -> float:
        return float(sum(f.length for f in self.boundary_faces))

    @cached_property
    def cell_centres(self) -> tuple[np.ndarray, np.ndarray]:
        xc = (np.arange(self.nx) + 0.5) * self.h[0]
        yc = (np.arange(self.ny) + 0.5) * self.h[1]
        return np.meshgrid(xc, yc, indexing="ij")


def build_grid(extent, resolution, periodic_x: bool = False) -> Grid:
    Lx, Ly = (float(v) for v in extent)
    nx, ny = resolution
    if int(nx) != nx or int(ny) != ny:
        raise GridError(f"resolution must be integers, got {resolution!r}")
    nx, ny = int(nx), int(ny)
    if not (Lx > 0 and Ly > 0):
        raise GridError(f"extent must be positive, got {extent!r}")
    if nx < 4 or ny < 4:
        raise GridError(f"resolution must be at least 4 cells per direction, got {resolution!r}")
    return Grid((Lx, Ly), (nx, ny), bool(periodic_x))


@dataclass(frozen=True)
class ControlMask:
    """Indicator of the control region, as fractional weights on velocity dofs.

    ``weights[k]`` is the fraction of the dual cell of dof ``k`` covered by the
    region, so ``sum(weights * grid.mass)`` over either component equals the
    region's area whether or not its edges line up with faces.
    """

    grid: Grid
    region: tuple[tuple[float, float], tuple[float, float]]
    weights: np.ndarray

    @property
    def area(self) -> float:
        (x0, x1), (y0, y1) = self.region
        return (x1 - x0) * (y1 - y0)

    def weighted_area(self, component: int = 0) -> float:
        sel = self.grid.component == component
        return float(np.sum(self.weights[sel] * self.grid.mass[sel]))

    @property
    def support(self) -> np.ndarray:
        return self.weights > 0

    @property
    def quadrature(self) -> np.ndarray:
        """Weights of the integral over the region, per velocity dof."""
        return self.weights * self.grid.mass


def _overlap(a0, a1, b0, b1):
    return np.clip(np.minimum(a1, b1) - np.maximum(a0, b0), 0.0, None)


def build_control_mask(grid: Grid, region) -> ControlMask:
    (x0, x1), (y0, y1) = ((float(a), float(b)) for a, b in region)
    Lx, Ly = grid.extent
    if not (x1 > x0 and y1 > y0):
        raise GridError(f"control region {region!r} is empty")
    if not (0.0 < x0 and x1 < Lx and 0.0 < y0 and y1 < Ly):
        raise GridError(
            f"control region {region!r} must lie strictly inside the domain "
            f"(0, {Lx}) x (0, {Ly})"
        )
    hx, hy = grid.h
    pos = grid.velocity_positions
    # every dual cell is hx by hy around its dof; clipping at walls is moot since the region is interior
    ox = _overlap(pos[:, 0] - 0.5 * hx, pos[:, 0] + 0.5 * hx, x0, x1)
    oy = _overlap(pos[:, 1] - 0.5 * hy, pos[:, 1] + 0.5 * hy, y0, y1)
    weights = np.where(grid.mass > 0, ox * oy / (hx * hy), 0.0)
    return ControlMask(grid, ((x0, x1), (y0, y1)), np.clip(weights, 0.0, 1.0))


@dataclass(frozen=True)
class TimeGrid:
    T: float
    nt: int

    def __post_init__(self):
        if not (self.T > 0) or int(self.nt) != self.nt or self.nt < 1:
            raise GridError(f"need T > 0 and nt >= 1, got T={self.T!r}, nt={self.nt!r}")

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.nt + 1) * self.dt

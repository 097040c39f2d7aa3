"""Field containers, discrete differential operators and quadrature norms.

Velocities are handled as flat vectors in the numbering of :class:`~navslip.grid.Grid`
(``ux`` block first, then ``uy``); :class:`VelocityField` is the two-array view
used for construction and I/O.  Pressures are ``(nx, ny)`` cell arrays, or their
flattened form.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
import scipy.sparse as sp

from .grid import Grid


class FieldError(ValueError):
    pass


@dataclass
class VelocityField:
    ux: np.ndarray
    uy: np.ndarray

    @classmethod
    def zeros(cls, grid: Grid) -> "VelocityField":
        return cls(np.zeros(grid.ux_shape), np.zeros(grid.uy_shape))

    @classmethod
    def from_flat(cls, grid: Grid, v: np.ndarray) -> "VelocityField":
        ux, uy = grid.split(np.asarray(v, dtype=float))
        return cls(ux.copy(), uy.copy())

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable) -> "VelocityField":
        """Sample ``fn(x, y) -> (vx, vy)`` at the face (and trace) locations."""
        pos = grid.velocity_positions
        vx, vy = fn(pos[:, 0], pos[:, 1])
        vals = np.where(grid.component == 0, np.broadcast_to(vx, len(pos)), np.broadcast_to(vy, len(pos)))
        return cls.from_flat(grid, vals)

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([self.ux.ravel(), self.uy.ravel()])

    def check(self, grid: Grid) -> None:
        if self.ux.shape != grid.ux_shape or self.uy.shape != grid.uy_shape:
            raise FieldError(
                f"velocity shapes {self.ux.shape}, {self.uy.shape} do not match grid "
                f"{grid.ux_shape}, {grid.uy_shape}"
            )


def mean_zero(grid: Grid, p: np.ndarray) -> np.ndarray:
    """Pressure in the zero-mean gauge."""
    return p - np.mean(p)


class BoundaryData:
    """Tangential boundary velocity ``b``, constant in time or given per time level.

    Values are stored in the flat velocity numbering and may only be nonzero on
    tangential trace dofs, so ``b . nu = 0`` holds at every wall point (corner
    points are normal to one of the two walls and must vanish).
    """

    def __init__(self, grid: Grid, values: np.ndarray | None = None):
        if values is None:
            values = np.zeros(grid.nu)
        values = np.asarray(values, dtype=float)
        if values.shape[-1] != grid.nu or values.ndim not in (1, 2):
            raise FieldError(f"boundary data has shape {values.shape}, expected (..., {grid.nu})")
        off = ~grid.is_trace
        if np.any(values[..., off] != 0.0):
            raise FieldError("boundary data must be purely tangential (b . nu = 0), corners included")
        self.grid = grid
        self.values = values

    @property
    def steady(self) -> bool:
        return self.values.ndim == 1

    def at(self, n: int) -> np.ndarray:
        return self.values if self.steady else self.values[n]

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    @classmethod
    def from_wall_function(cls, grid: Grid, fn: Callable, nt: int | None = None, times=None):
        """Build from ``fn(x, y[, t]) -> tangential speed`` (positive along the tangent)."""
        tangent_sign = {"bottom": 1.0, "right": 1.0, "top": -1.0, "left": -1.0}

        def level(t):
            v = np.zeros(grid.nu)
            pos = grid.velocity_positions
            for side, idx in grid.trace_sides.items():
                idx = idx[grid.is_trace[idx]]
                args = (pos[idx, 0], pos[idx, 1]) if t is None else (pos[idx, 0], pos[idx, 1], t)
                v[idx] = tangent_sign[side] * np.broadcast_to(fn(*args), idx.shape)
            return v

        if times is None:
            return cls(grid, level(None))
        return cls(grid, np.array([level(t) for t in times]))


# ---------------------------------------------------------------------------
# discrete operators


@lru_cache(maxsize=32)
def _operators(grid: Grid):
    xa, ya = grid.xaxis, grid.yaxis
    Ix_nodes = sp.identity(xa.n_nodes, format="csr")
    Iy_nodes = sp.identity(ya.n_nodes, format="csr")
    z_ux_cell = sp.csr_matrix((grid.np, grid.nuy))

    div_x = sp.kron(xa.node_to_cell_diff, ya.ext_to_cell)
    div_y = sp.kron(xa.ext_to_cell, ya.node_to_cell_diff)
    div = sp.hstack([div_x, div_y]).tocsr()

    d11 = sp.hstack([div_x, z_ux_cell]).tocsr()
    d22 = sp.hstack([sp.csr_matrix((grid.np, grid.nux)), div_y]).tocsr()
    dux_dy = sp.kron(Ix_nodes, ya.ext_to_node_diff)
    duy_dx = sp.kron(xa.ext_to_node_diff, Iy_nodes)
    d12 = (0.5 * sp.hstack([dux_dy, duy_dx])).tocsr()
    vertex_weight = np.outer(xa.node_weight, ya.node_weight).ravel()
    return div, d11, d22, d12, vertex_weight


def divergence_matrix(grid: Grid) -> sp.csr_matrix:
    return _operators(grid)[0]


def strain_matrices(grid: Grid):
    """``(D11, D22, D12, vertex_weights)``: strain components at cells and vertices."""
    _, d11, d22, d12, vw = _operators(grid)
    return d11, d22, d12, vw


def divergence(grid: Grid, u) -> np.ndarray:
    """Cell-wise MAC divergence, returned as an ``(nx, ny)`` array."""
    v = u.flat if isinstance(u, VelocityField) else np.asarray(u)
    if v.shape != (grid.nu,):
        raise FieldError(f"velocity vector has shape {v.shape}, expected ({grid.nu},)")
    return (divergence_matrix(grid) @ v).reshape(grid.nx, grid.ny)


def gradient(grid: Grid, q: np.ndarray) -> np.ndarray:
    """Face-centred pressure gradient; zero on wall-normal and trace dofs."""
    q = np.asarray(q, dtype=float).reshape(grid.nx, grid.ny)
    hx, hy = grid.h
    gx = np.zeros(grid.ux_shape)
    gy = np.zeros(grid.uy_shape)
    if grid.periodic_x:
        gx[:, 1:-1] = (q - np.roll(q, 1, axis=0)) / hx
    else:
        gx[1:-1, 1:-1] = (q[1:] - q[:-1]) / hx
    gy[grid.xaxis.cell_ext(np.arange(grid.nx)), 1:-1] = (q[:, 1:] - q[:, :-1]) / hy
    return grid.join(gx, gy)


def strain_norm_sq(grid: Grid, u: np.ndarray) -> float:
    """Discrete ``||D(u)||^2`` (Frobenius, integrated over the domain)."""
    d11, d22, d12, vw = strain_matrices(grid)
    ca = grid.cell_area
    return float(ca * np.sum((d11 @ u) ** 2) + ca * np.sum((d22 @ u) ** 2) + 2.0 * np.sum(vw * (d12 @ u) ** 2))


# ---------------------------------------------------------------------------
# quadrature


def _as_vector(grid: Grid, a) -> np.ndarray:
    if isinstance(a, VelocityField):
        a.check(grid)
        return a.flat
    return np.asarray(a, dtype=float)


def _weights_for(grid: Grid, size: int) -> np.ndarray:
    if size == grid.nu:
        return grid.mass
    if size == grid.np:
        return np.full(grid.np, grid.cell_area)
    raise FieldError(f"cannot integrate a field of size {size} on this grid")


def l2_inner(grid: Grid, a, c) -> float:
    """Midpoint-rule ``int_Omega a . c dx`` for velocity or cell fields."""
    va, vc = _as_vector(grid, a).ravel(), _as_vector(grid, c).ravel()
    if va.shape != vc.shape:
        raise FieldError(f"shape mismatch: {va.shape} vs {vc.shape}")
    return float(np.sum(_weights_for(grid, va.size) * va * vc))


def l2_norm(grid: Grid, a) -> float:
    return float(np.sqrt(max(l2_inner(grid, a, a), 0.0)))


def boundary_trace_norm(grid: Grid, u, b=None) -> float:
    """``||(u - b)_tau||`` over the walls, by nodal quadrature along each wall."""
    v = _as_vector(grid, u)
    if b is not None:
        v = v - (b.at(0) if isinstance(b, BoundaryData) else _as_vector(grid, b))
    return float(np.sqrt(np.sum(grid.trace_weight * v**2)))


def spacetime_l2(trajectory: Iterable, dt: float, norm: Callable[[np.ndarray], float] | None = None) -> float:
    """``sqrt(sum_n dt * ||field_n||^2)`` over the levels given (right-endpoint rule).

    Pass levels ``1..nt`` of a state trajectory; ``norm`` defaults to the
    Euclidean norm of the level (use a closure over :func:`l2_norm` or
    :func:`boundary_trace_norm` for physical norms).
    """
    levels = list(trajectory)
    if not levels:
        raise FieldError("empty trajectory")
    if norm is None:
        norm = lambda x: float(np.linalg.norm(np.ravel(x)))  # noqa: E731
    return float(np.sqrt(dt * sum(norm(level) ** 2 for level in levels)))


# ---------------------------------------------------------------------------
# dump format


def _block_rows(grid: Grid, name: str, arr: np.ndarray):
    hx, hy = grid.h
    yield [name, grid.nx, grid.ny, repr(hx), repr(hy), arr.shape[0], arr.shape[1]]
    for line in arr:
        yield [repr(float(v)) for v in line]


def dump_fields(grid: Grid, u: np.ndarray, p: np.ndarray | None = None, path=None) -> str:
    """Write velocity (and pressure) as CSV blocks; one row per grid line.

    Each block opens with a record ``component,nx,ny,hx,hy,rows,cols`` followed by
    ``rows`` lines of ``cols`` values.  Returns the text; writes it if ``path``.
    """
    ux, uy = grid.split(np.asarray(u, dtype=float))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["component", "nx", "ny", "hx", "hy", "rows", "cols"])
    for name, arr in (("ux", ux), ("uy", uy)):
        w.writerows(_block_rows(grid, name, arr))
    if p is not None:
        w.writerows(_block_rows(grid, "p", np.asarray(p, dtype=float).reshape(grid.nx, grid.ny)))
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def load_fields(text_or_path) -> dict[str, np.ndarray]:
    text = str(text_or_path)
    if "\n" not in text:
        text = Path(text).read_text()
    rows = list(csv.reader(io.StringIO(text)))
    out = {}
    k = 1
    while k < len(rows):
        name, _nx, _ny, _hx, _hy, nr, nc = rows[k]
        nr, nc = int(nr), int(nc)
        out[name] = np.array([[float(v) for v in r] for r in rows[k + 1 : k + 1 + nr]]).reshape(nr, nc)
        k += 1 + nr
    return out

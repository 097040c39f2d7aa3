"""Sparse operators and per-step saddle-point systems.

The momentum block of every step is

    A = theta * (K + alpha * B_wall + C(w)) + Mass / dt

with ``K`` the viscous form ``2 mu (D u, D v)``, ``B_wall`` the wall-length
weighted mass on tangential trace dofs (slip only) and ``C(w)`` the
skew-symmetrised convection advected by ``w``.  Velocity dofs that are fixed
(wall-normal ones always, the tangential trace under no-slip) are eliminated,
pressure is coupled through the weighted divergence and its gauge is fixed by
pinning one cell.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fields import divergence_matrix, strain_matrices
from .grid import Grid

logger = logging.getLogger(__name__)


class LinearSolverError(RuntimeError):
    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


class ConfigurationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# convection


@dataclass(frozen=True)
class ConvectionTensor:
    """Trilinear convection form stored as ``(row, col, k, coeff)`` triplets.

    ``N(w)[row, col] = sum coeff * w[k]`` approximates ``int (w . grad phi_col) . phi_row``.
    All matrices derived from it (the skew operator and its Jacobian with respect
    to the advecting field) are read off the same triplets, so the linearised
    and transposed schemes stay exactly consistent with the forward one.
    """

    n: int
    rows: np.ndarray
    cols: np.ndarray
    ks: np.ndarray
    coeffs: np.ndarray

    def matrix(self, w: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix((self.coeffs * w[self.ks], (self.rows, self.cols)), shape=(self.n, self.n))

    def skew(self, w: np.ndarray) -> sp.csr_matrix:
        """``C(w) = (N(w) - N(w)^T) / 2``."""
        N = self.matrix(w)
        return (0.5 * (N - N.T)).tocsr()

    def skew_jacobian(self, u: np.ndarray) -> sp.csr_matrix:
        """Matrix of ``w -> C(w) u``."""
        data = 0.5 * self.coeffs
        rows = np.concatenate([self.rows, self.cols])
        cols = np.concatenate([self.ks, self.ks])
        vals = np.concatenate([data * u[self.cols], -data * u[self.rows]])
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))


def _component_triplets(grid: Grid, c: int):
    A, B = (grid.xaxis, grid.yaxis) if c == 0 else (grid.yaxis, grid.xaxis)
    if c == 0:
        own = lambda a, b: grid.ux_index(a, b)  # noqa: E731
        other = lambda ea, mb: grid.uy_index(ea, mb)  # noqa: E731
    else:
        own = lambda a, b: grid.uy_index(b, a)  # noqa: E731
        other = lambda ea, mb: grid.ux_index(mb, ea)  # noqa: E731

    a_all = np.arange(A.n_nodes)[~A.boundary_node]
    b_all = B.cell_ext(np.arange(B.n))
    a, b = (x.ravel() for x in np.meshgrid(a_all, b_all, indexing="ij"))
    row = own(a, b)
    V = A.node_weight[a] * B.ext_weight[b]

    rows, cols, ks, coeffs = [], [], [], []

    def add(r, col, k, cf):
        rows.append(r)
        cols.append(col)
        ks.append(k)
        coeffs.append(cf)

    # w_c * d/dA u_c, central difference along the node direction
    ap, am = A.wrap_node(a + 1), A.wrap_node(a - 1)
    cf = V / (2.0 * A.h)
    add(row, own(ap, b), row, cf)
    add(row, own(am, b), row, -cf)

    # w_other * d/dB u_c, w_other averaged from its four surrounding faces
    bp, bm = B.wrap_ext(b + 1), B.wrap_ext(b - 1)
    span = B.ext_span(b - 1, b + 1) if B.periodic else B.ext_pos[b + 1] - B.ext_pos[b - 1]
    e_lo, e_hi = A.ext_around_node(a)
    m_lo, m_hi = B.nodes_around_ext(b)
    cf = 0.25 * V / span
    for ea in (e_lo, e_hi):
        for mb in (m_lo, m_hi):
            k = other(ea, mb)
            add(row, own(a, bp), k, cf)
            add(row, own(a, bm), k, -cf)
    return [np.concatenate(x) for x in (rows, cols, ks, coeffs)]


@lru_cache(maxsize=32)
def convection_tensor(grid: Grid) -> ConvectionTensor:
    parts = [_component_triplets(grid, c) for c in (0, 1)]
    rows, cols, ks, coeffs = (np.concatenate([p[i] for p in parts]) for i in range(4))
    return ConvectionTensor(grid.nu, rows.astype(np.int64), cols.astype(np.int64), ks.astype(np.int64), coeffs)


# ---------------------------------------------------------------------------
# linear operators


@lru_cache(maxsize=32)
def _unit_viscous(grid: Grid) -> sp.csr_matrix:
    d11, d22, d12, vw = strain_matrices(grid)
    ca = grid.cell_area
    K = ca * (d11.T @ d11) + ca * (d22.T @ d22) + 2.0 * (d12.T @ sp.diags(vw) @ d12)
    return (2.0 * K).tocsr()


def viscous_matrix(grid: Grid, mu: float) -> sp.csr_matrix:
    """Stiffness of ``2 mu int D(u) : D(v)``."""
    return (mu * _unit_viscous(grid)).tocsr()


def wall_mass(grid: Grid) -> sp.csr_matrix:
    """Diagonal wall-length weights on tangential trace dofs."""
    return sp.diags(np.where(grid.is_trace, grid.trace_weight, 0.0)).tocsr()


def weighted_divergence(grid: Grid) -> sp.csr_matrix:
    return (grid.cell_area * divergence_matrix(grid)).tocsr()


def check_alpha(alpha: float, b_sup: float) -> None:
    if not alpha > b_sup + 1.0:
        raise ConfigurationError(
            f"friction coefficient alpha={alpha!r} must exceed ||b||_inf + 1 = {b_sup + 1.0!r}"
        )


# ---------------------------------------------------------------------------
# saddle systems


@dataclass
class SaddleSystem:
    """Saddle system on the free velocity dofs.

    Unknown vector ``[u_free, p[1:]]``: the pressure gauge is fixed by pinning
    the first cell (its continuity row is the negative sum of the others, so it
    is dropped), and solutions are shifted to zero mean afterwards.  Pinning
    keeps the matrix sparse, unlike a bordering row for the mean.
    """

    grid: Grid
    free: np.ndarray
    A_full: sp.csr_matrix
    matrix: sp.csc_matrix
    rhs: np.ndarray | None = None
    fixed_values: np.ndarray | None = None

    @property
    def nfree(self) -> int:
        return int(self.free.sum())

    @property
    def A(self) -> sp.csr_matrix:
        return self.A_full[self.free][:, self.free]

    @property
    def B(self) -> sp.csr_matrix:
        """Divergence block (continuity rows of cells ``1..np-1``)."""
        return self.matrix[self.nfree :, : self.nfree]

    @property
    def G(self) -> sp.csr_matrix:
        """Pressure-gradient block, ``G = -B^T``."""
        return self.matrix[: self.nfree, self.nfree :]

    def pack(self, u_free: np.ndarray, p: np.ndarray | None = None) -> np.ndarray:
        if p is None:
            p = np.zeros(self.grid.np)
        p = np.ravel(p)
        return np.concatenate([u_free, p[1:] - p[0]])

    def unpack(self, x: np.ndarray, fixed_values: np.ndarray | None = None):
        """Split a solution into full velocity (fixed dofs filled) and mean-zero pressure."""
        u = np.zeros(self.grid.nu) if fixed_values is None else np.array(fixed_values, dtype=float)
        u[self.free] = x[: self.nfree]
        p = np.concatenate([[0.0], x[self.nfree :]])
        return u, p - p.mean()

    def apply(self, u: np.ndarray, p: np.ndarray) -> np.ndarray:
        return self.matrix @ self.pack(u[self.free], p)


def build_saddle(grid: Grid, A_full: sp.csr_matrix, free: np.ndarray) -> SaddleSystem:
    Dw = weighted_divergence(grid)[1:, free]
    mat = sp.bmat([[A_full[free][:, free], -Dw.T], [Dw, None]], format="csc")
    return SaddleSystem(grid, free, A_full, mat)


def free_dofs(grid: Grid, kind: str) -> np.ndarray:
    free = ~grid.is_normal
    if kind == "dirichlet":
        free &= ~grid.is_trace
    return free


def assemble_saddle(
    grid: Grid,
    bc,
    convection_field: np.ndarray | None,
    dt: float | None,
    mu: float,
    alpha: float | None = None,
    theta: float = 1.0,
    rhs_full: np.ndarray | None = None,
    fixed_values: np.ndarray | None = None,
) -> SaddleSystem:
    """Assemble one implicit step (or a steady solve when ``dt`` is None).

    ``bc`` is a :class:`~navslip.forward.BcSpec` or just the kind string.
    ``rhs_full`` is the momentum load on all velocity dofs; columns of fixed
    dofs are moved to the right-hand side using ``fixed_values``.
    """
    kind = bc if isinstance(bc, str) else bc.kind
    if dt is not None and not dt > 0:
        raise ConfigurationError(f"time step must be positive, got dt={dt!r}")
    if not mu > 0:
        raise ConfigurationError(f"viscosity must be positive, got mu={mu!r}")
    if kind == "slip":
        if alpha is None:
            alpha = bc.alpha
        b_sup = 0.0 if isinstance(bc, str) or bc.b is None else bc.b.sup_norm()
        check_alpha(alpha, b_sup)
    A = viscous_matrix(grid, mu)
    if kind == "slip":
        A = A + alpha * wall_mass(grid)
    if convection_field is not None:
        A = A + convection_tensor(grid).skew(convection_field)
    A = theta * A
    if dt is not None:
        A = A + sp.diags(grid.mass / dt)
    A = A.tocsr()
    free = free_dofs(grid, kind)
    system = build_saddle(grid, A, free)
    if rhs_full is not None:
        rhs_full = np.asarray(rhs_full, dtype=float)
        fixed = np.zeros(grid.nu) if fixed_values is None else np.asarray(fixed_values, dtype=float)
        mom = rhs_full[free] - A[free][:, ~free] @ fixed[~free]
        cont = -weighted_divergence(grid)[1:, ~free] @ fixed[~free]
        system.rhs = np.concatenate([mom, cont])
        system.fixed_values = fixed
    return system


# ---------------------------------------------------------------------------
# solvers


@dataclass
class SolverOptions:
    method: str = "direct"  # "direct" | "gmres"
    tol: float = 1e-10
    max_iter: int = 500
    refine_steps: int = 3


class Factorization:
    """Solve ``S x = r`` or ``S^T x = r`` for a fixed saddle matrix."""

    def __init__(self, matrix: sp.csc_matrix, options: SolverOptions):
        self.matrix = matrix
        self.options = options
        self.last_residual = float("nan")
        if options.method == "direct":
            self._lu = spla.splu(matrix)
        elif options.method == "gmres":
            self._lu = None
            self._ilu = {}
        else:
            raise ConfigurationError(f"unknown linear solver method {options.method!r}")

    def _raw(self, r: np.ndarray, trans: bool) -> np.ndarray:
        if self._lu is not None:
            return self._lu.solve(r, trans="T" if trans else "N")
        mat = self.matrix.T.tocsc() if trans else self.matrix
        if trans not in self._ilu:
            self._ilu[trans] = spla.spilu(mat, drop_tol=1e-6, fill_factor=20)
        M = spla.LinearOperator(mat.shape, self._ilu[trans].solve)
        x, info = spla.gmres(mat, r, M=M, rtol=0.1 * self.options.tol, atol=0.0,
                             restart=200, maxiter=self.options.max_iter)
        return x

    def solve(self, r: np.ndarray, trans: bool = False) -> np.ndarray:
        mat = self.matrix.T if trans else self.matrix
        rn = np.linalg.norm(r)
        if rn == 0.0:
            self.last_residual = 0.0
            return np.zeros_like(r)
        x = self._raw(r, trans)
        res = np.linalg.norm(r - mat @ x) / rn
        for _ in range(self.options.refine_steps):
            if res <= self.options.tol:
                break
            x = x + self._raw(r - mat @ x, trans)
            res = np.linalg.norm(r - mat @ x) / rn
        if not np.isfinite(res) or res > self.options.tol:
            raise LinearSolverError("saddle solve did not reach tolerance", res)
        self.last_residual = res
        return x


def solve_saddle(system: SaddleSystem, tol: float = 1e-10, options: SolverOptions | None = None):
    """Solve an assembled system; returns ``(velocity, mean-zero pressure)``."""
    if not tol > 0:
        raise ConfigurationError(f"tolerance must be positive, got {tol!r}")
    if system.rhs is None:
        raise ConfigurationError("system has no right-hand side")
    opts = options or SolverOptions()
    opts = SolverOptions(opts.method, tol, opts.max_iter, opts.refine_steps)
    fac = Factorization(system.matrix, opts)
    x = fac.solve(system.rhs)
    return system.unpack(x, system.fixed_values)

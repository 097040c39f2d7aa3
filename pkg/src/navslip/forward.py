"""Time integration of the no-slip and Navier-slip state equations.

Each step is a theta-scheme (implicit Euler by default) with Oseen
linearisation: the convecting field is the previous level, so one linear
saddle solve per step.  The skew-symmetric convective form drops out of the
energy balance, which for implicit Euler and homogeneous data gives

    1/2 |u1|^2 - 1/2 |u0|^2 + dt (2 mu |D u1|^2 + alpha |u1_tau|^2_wall) = -1/2 |u1 - u0|^2.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fields import BoundaryData, boundary_trace_norm, divergence, l2_inner, strain_norm_sq
from .grid import ControlMask, Grid, TimeGrid
from .linalg import (
    ConfigurationError,
    Factorization,
    LinearSolverError,
    SolverOptions,
    assemble_saddle,
    check_alpha,
    convection_tensor,
    free_dofs,
    viscous_matrix,
    wall_mass,
    weighted_divergence,
)

logger = logging.getLogger(__name__)

BC_KINDS = ("dirichlet", "slip")


class NumericalError(RuntimeError):
    def __init__(self, message: str, step: int | None = None, partial=None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step
        self.partial = partial


@dataclass(frozen=True)
class BcSpec:
    kind: str
    alpha: float | None = None
    b: BoundaryData | None = None

    def __post_init__(self):
        if self.kind not in BC_KINDS:
            raise ConfigurationError(f"bc.kind must be one of {BC_KINDS}, got {self.kind!r}")
        if self.kind == "slip":
            if self.alpha is None:
                raise ConfigurationError("bc.alpha is required for slip boundary conditions")
            check_alpha(float(self.alpha), self.b.sup_norm() if self.b is not None else 0.0)

    def boundary(self, grid: Grid, n: int) -> np.ndarray:
        return np.zeros(grid.nu) if self.b is None else self.b.at(n)

    def slip(self, alpha: float) -> "BcSpec":
        return BcSpec("slip", float(alpha), self.b)

    def dirichlet(self) -> "BcSpec":
        return BcSpec("dirichlet", None, self.b)


@dataclass(frozen=True)
class FluidParams:
    mu: float

    def __post_init__(self):
        if not self.mu > 0:
            raise ConfigurationError(f"fluid.mu must be positive, got {self.mu!r}")


@dataclass
class ProblemConfig:
    grid: Grid
    time: TimeGrid
    bc: BcSpec
    fluid: FluidParams
    a: np.ndarray
    mask: ControlMask
    z_d: np.ndarray | None = None
    M: float = 1.0
    body_force: np.ndarray | None = None
    theta: float = 1.0
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.validate()

    def validate(self) -> None:
        g = self.grid
        if self.a.shape != (g.nu,):
            raise ConfigurationError(f"initial: expected {g.nu} velocity values, got shape {self.a.shape}")
        if not self.M > 0:
            raise ConfigurationError(f"control.M must be positive, got {self.M!r}")
        if not 0.5 <= self.theta <= 1.0:
            raise ConfigurationError(f"time.theta must lie in [0.5, 1], got {self.theta!r}")
        if np.any(self.a[g.is_normal] != 0.0):
            raise ConfigurationError("initial: normal boundary velocity must vanish (a . nu = b(0) . nu = 0)")
        scale = max(np.max(np.abs(self.a)), 1.0) / min(g.h)
        div = np.max(np.abs(divergence(g, self.a)))
        if div > 1e3 * np.finfo(float).eps * scale:
            raise ConfigurationError(f"initial: velocity is not discretely divergence-free (max |div a| = {div:.3e})")
        if self.z_d is not None:
            self.z_d = np.asarray(self.z_d, dtype=float)
            if self.z_d.shape != (self.time.nt + 1, g.nu):
                raise ConfigurationError(
                    f"target: expected shape {(self.time.nt + 1, g.nu)}, got {self.z_d.shape}"
                )
        if self.body_force is not None and np.shape(self.body_force) != (g.nu,):
            raise ConfigurationError("body_force: wrong number of velocity values")
        if self.mask.grid != g:
            raise ConfigurationError("control.region: mask built on a different grid")

    @property
    def alpha(self) -> float:
        return float(self.bc.alpha) if self.bc.kind == "slip" else 0.0

    def with_bc(self, bc: BcSpec) -> "ProblemConfig":
        return replace(self, bc=bc)

    def zero_control(self) -> np.ndarray:
        return np.zeros((self.time.nt, self.grid.nu))


@dataclass
class StateTrajectory:
    """Levels ``0..nt`` of velocity and mean-zero pressure."""

    u: np.ndarray
    p: np.ndarray
    residuals: np.ndarray
    factors: list | None = None

    @property
    def nt(self) -> int:
        return self.u.shape[0] - 1


def project_divergence_free(grid: Grid, u: np.ndarray) -> np.ndarray:
    """Mass-weighted L2 projection onto discretely divergence-free fields.

    Normal wall dofs are set to zero and tangential trace values are left alone.
    """
    v = np.array(u, dtype=float)
    v[grid.is_normal] = 0.0
    F = (grid.mass > 0) & ~grid.is_normal
    Dw = weighted_divergence(grid)[:, F]
    L = (Dw @ sp.diags(1.0 / grid.mass[F]) @ Dw.T).tocsc()
    rhs = Dw @ v[F]
    phi = np.zeros(grid.np)
    phi[1:] = spla.spsolve(L[1:, 1:], rhs[1:])
    v[F] -= (Dw.T @ phi) / grid.mass[F]
    return v


def _static_operator(cfg: ProblemConfig) -> sp.csr_matrix:
    K = viscous_matrix(cfg.grid, cfg.fluid.mu)
    if cfg.bc.kind == "slip":
        K = K + cfg.alpha * wall_mass(cfg.grid)
    return K.tocsr()


def step_rhs(cfg: ProblemConfig, prev: np.ndarray, f_next: np.ndarray, n: int) -> np.ndarray:
    """Momentum load for the step producing level ``n`` from ``prev``."""
    g, dt, th = cfg.grid, cfg.time.dt, cfg.theta
    rhs = g.mass * prev / dt + cfg.mask.quadrature * f_next
    if cfg.body_force is not None:
        rhs = rhs + g.mass * cfg.body_force
    if cfg.bc.kind == "slip":
        bmix = th * cfg.bc.boundary(g, n) + (1.0 - th) * cfg.bc.boundary(g, n - 1)
        rhs = rhs + cfg.alpha * (wall_mass(g) @ bmix)
    if th < 1.0:
        expl = _static_operator(cfg) + convection_tensor(g).skew(prev)
        rhs = rhs - (1.0 - th) * (expl @ prev)
    return rhs


def step_system(cfg: ProblemConfig, prev: np.ndarray, n: int, rhs_full=None):
    fixed = None
    if cfg.bc.kind == "dirichlet":
        fixed = np.where(cfg.grid.is_trace, cfg.bc.boundary(cfg.grid, n), 0.0)
    return assemble_saddle(
        cfg.grid, cfg.bc, prev, cfg.time.dt, cfg.fluid.mu,
        alpha=cfg.bc.alpha if cfg.bc.kind == "slip" else None,
        theta=cfg.theta, rhs_full=rhs_full, fixed_values=fixed,
    )


def advance_step(prev: np.ndarray, cfg: ProblemConfig, f_next: np.ndarray, n: int = 1, return_factor=False):
    """One time step; returns ``(u, p, relative residual)`` (plus the factorization)."""
    system = step_system(cfg, prev, n, step_rhs(cfg, prev, f_next, n))
    fac = Factorization(system.matrix, cfg.solver)
    try:
        x = fac.solve(system.rhs)
    except LinearSolverError as exc:
        raise NumericalError(str(exc), step=n) from exc
    u, p = system.unpack(x, system.fixed_values)
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(p))):
        raise NumericalError("non-finite values in solution", step=n)
    out = (u, p, fac.last_residual)
    return out + (fac,) if return_factor else out


def _control_levels(cfg: ProblemConfig, f) -> np.ndarray:
    nt, nu = cfg.time.nt, cfg.grid.nu
    if f is None:
        return np.zeros((nt, nu))
    f = np.asarray(f, dtype=float)
    if f.shape == (nu,):
        return np.broadcast_to(f, (nt, nu))
    if f.shape != (nt, nu):
        raise ConfigurationError(f"control: expected shape {(nt, nu)}, got {f.shape}")
    return f


def solve_forward(cfg: ProblemConfig, f=None, keep_factors: bool = False) -> StateTrajectory:
    """Integrate from ``a`` over ``nt`` steps with control levels ``f[0..nt-1]`` (acting on steps 1..nt)."""
    g, nt = cfg.grid, cfg.time.nt
    f = _control_levels(cfg, f)
    u = np.zeros((nt + 1, g.nu))
    p = np.zeros((nt + 1, g.np))
    res = np.zeros(nt)
    u[0] = cfg.a
    if cfg.bc.kind == "dirichlet":
        u[0] = np.where(g.is_trace, cfg.bc.boundary(g, 0), u[0])
    factors = [] if keep_factors else None
    for n in range(1, nt + 1):
        try:
            un, pn, r, fac = advance_step(u[n - 1], cfg, f[n - 1], n, return_factor=True)
        except NumericalError as exc:
            exc.partial = StateTrajectory(u[:n], p[:n], res[: n - 1])
            raise
        u[n], p[n], res[n - 1] = un, pn, r
        if keep_factors:
            factors.append(fac)
    return StateTrajectory(u, p, res, factors)


def solve_steady_stokes(grid: Grid, bc: BcSpec, mu: float, body_force: np.ndarray | None = None,
                        solver: SolverOptions | None = None):
    """Steady Stokes with the given wall conditions; returns ``(u, p)``."""
    rhs = np.zeros(grid.nu) if body_force is None else grid.mass * np.asarray(body_force, dtype=float)
    b = bc.boundary(grid, 0)
    fixed = None
    if bc.kind == "slip":
        rhs = rhs + bc.alpha * (wall_mass(grid) @ b)
    else:
        fixed = np.where(grid.is_trace, b, 0.0)
    system = assemble_saddle(grid, bc, None, None, mu, rhs_full=rhs, fixed_values=fixed)
    fac = Factorization(system.matrix, solver or SolverOptions())
    return system.unpack(fac.solve(system.rhs), system.fixed_values)


def energy_balance(grid: Grid, mu: float, alpha: float, dt: float, u0: np.ndarray, u1: np.ndarray,
                   theta: float = 1.0) -> dict:
    """Terms of the discrete energy balance for one step with homogeneous data.

    Dissipation is evaluated at ``u_theta = theta u1 + (1 - theta) u0``; the
    scheme then gives ``lhs = -(theta - 1/2) |u1 - u0|^2 <= 0`` exactly, which is
    returned as ``expected``.
    """
    um = theta * u1 + (1.0 - theta) * u0
    e0 = 0.5 * l2_inner(grid, u0, u0)
    e1 = 0.5 * l2_inner(grid, u1, u1)
    visc = dt * 2.0 * mu * strain_norm_sq(grid, um)
    wall = dt * alpha * boundary_trace_norm(grid, np.where(grid.is_trace, um, 0.0)) ** 2
    jump = l2_inner(grid, u1 - u0, u1 - u0)
    return {"e0": e0, "e1": e1, "viscous": visc, "wall": wall, "lhs": e1 - e0 + visc + wall,
            "expected": -(theta - 0.5) * jump}


def free_velocity(cfg: ProblemConfig) -> np.ndarray:
    return free_dofs(cfg.grid, cfg.bc.kind)

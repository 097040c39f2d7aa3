"""Linearised state and discrete adjoint of the time-stepping scheme.

Step ``n`` of the forward scheme reads ``S_n(u^{n-1}) [u^n, p^n] = R_n(u^{n-1}, f^n)``.
Differentiating in ``u^{n-1}`` gives the transfer operator

    T_n = Mass/dt - (1 - theta) (K + alpha B_wall + C(u^{n-1})) - d/dw [C(w) u_theta^n]

with ``u_theta^n = theta u^n + (1 - theta) u^{n-1}``; the last term comes from
the convection triplets, so it is exact.  The adjoint sweep applies ``S_n^T``
and ``T_{n+1}^T`` backwards from a zero terminal level.

Indexing: the adjoint solved at step ``n`` is stored at level ``n - 1`` (the left
end of the interval the control ``f^n`` acts on), so ``phi[nt] = 0`` is the
terminal condition and the gradient for control level ``n`` pairs with
``phi[n - 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .forward import (
    NumericalError,
    ProblemConfig,
    StateTrajectory,
    _control_levels,
    _static_operator,
    free_velocity,
    step_system,
)
from .grid import ControlMask
from .linalg import ConfigurationError, Factorization, LinearSolverError, convection_tensor


@dataclass
class LinearizedTrajectory:
    v: np.ndarray
    q: np.ndarray


@dataclass
class AdjointTrajectory:
    phi: np.ndarray
    pi: np.ndarray

    @property
    def nt(self) -> int:
        return self.phi.shape[0] - 1


def _check(state: StateTrajectory, cfg: ProblemConfig) -> None:
    if state.u.shape != (cfg.time.nt + 1, cfg.grid.nu):
        raise ConfigurationError(
            f"state trajectory shape {state.u.shape} does not match config "
            f"({cfg.time.nt + 1}, {cfg.grid.nu})"
        )


def transfer_operator(cfg: ProblemConfig, state: StateTrajectory, n: int) -> sp.csr_matrix:
    """``T_n``: how a perturbation of level ``n - 1`` enters the step to level ``n``."""
    g, th = cfg.grid, cfg.theta
    prev, cur = state.u[n - 1], state.u[n]
    tensor = convection_tensor(g)
    T = sp.diags(g.mass / cfg.time.dt) - tensor.skew_jacobian(th * cur + (1.0 - th) * prev)
    if th < 1.0:
        T = T - (1.0 - th) * (_static_operator(cfg) + tensor.skew(prev))
    return T.tocsr()


def _factor(cfg: ProblemConfig, state: StateTrajectory, n: int):
    system = step_system(cfg, state.u[n - 1], n)
    if state.factors is not None and len(state.factors) >= n:
        return system, state.factors[n - 1]
    return system, Factorization(system.matrix, cfg.solver)


def solve_linearized(state: StateTrajectory, cfg: ProblemConfig, g) -> LinearizedTrajectory:
    """Directional derivative of the state in control direction ``g``."""
    _check(state, cfg)
    grid, nt = cfg.grid, cfg.time.nt
    g = _control_levels(cfg, g)
    free = free_velocity(cfg)
    v = np.zeros((nt + 1, grid.nu))
    q = np.zeros((nt + 1, grid.np))
    for n in range(1, nt + 1):
        system, fac = _factor(cfg, state, n)
        load = transfer_operator(cfg, state, n) @ v[n - 1] + cfg.mask.quadrature * g[n - 1]
        try:
            x = fac.solve(system.pack(load[free]))
        except LinearSolverError as exc:
            raise NumericalError(str(exc), step=n) from exc
        v[n], q[n] = system.unpack(x)
    return LinearizedTrajectory(v, q)


def solve_adjoint(state: StateTrajectory, cfg: ProblemConfig, source: np.ndarray | None = None) -> AdjointTrajectory:
    """Backward sweep; the default source is ``u - z_d`` at levels ``1..nt``.

    ``source`` may be given explicitly as an ``(nt + 1, nu)`` array (level 0 is
    ignored), which is how duality with :func:`solve_linearized` is checked.
    """
    _check(state, cfg)
    grid, nt = cfg.grid, cfg.time.nt
    if source is None:
        z = np.zeros_like(state.u) if cfg.z_d is None else cfg.z_d
        if z.shape != state.u.shape:
            raise ConfigurationError(f"target has shape {z.shape}, expected {state.u.shape}")
        source = state.u - z
    elif source.shape != state.u.shape:
        raise ConfigurationError(f"adjoint source has shape {source.shape}, expected {state.u.shape}")
    free = free_velocity(cfg)
    phi = np.zeros((nt + 1, grid.nu))
    pi = np.zeros((nt + 1, grid.np))
    carry = np.zeros(grid.nu)
    for n in range(nt, 0, -1):
        system, fac = _factor(cfg, state, n)
        load = grid.mass * source[n] + carry
        try:
            x = fac.solve(system.pack(load[free]), trans=True)
        except LinearSolverError as exc:
            raise NumericalError(str(exc), step=n) from exc
        phi[n - 1], pi[n - 1] = system.unpack(x)
        carry = transfer_operator(cfg, state, n).T @ phi[n - 1]
    return AdjointTrajectory(phi, pi)


def cost_gradient(adjoint: AdjointTrajectory, f: np.ndarray, M: float, mask: ControlMask) -> np.ndarray:
    """Riesz representer of ``dJ`` in the space-time L2 product over the control region."""
    f = np.asarray(f, dtype=float)
    return np.where(mask.support, adjoint.phi[:-1] + M * f, 0.0)

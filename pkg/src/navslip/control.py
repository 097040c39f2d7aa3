"""Cost functional, admissible sets and the projected-gradient optimiser.

Controls are ``(nt, nu)`` arrays: level ``n`` acts on the step ``(t_n, t_{n+1}]``
and only dofs inside the control region carry values.  Their inner product is
the space-time L2 product over the region, ``sum_n dt sum_k w_k f_k g_k`` with
``w`` the region's quadrature weights.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .adjoint import AdjointTrajectory, cost_gradient, solve_adjoint
from .fields import l2_inner
from .forward import NumericalError, ProblemConfig, StateTrajectory, solve_forward
from .grid import ControlMask
from .linalg import ConfigurationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ControlSpace:
    mask: ControlMask
    dt: float
    nt: int

    @classmethod
    def of(cls, cfg: ProblemConfig) -> "ControlSpace":
        return cls(cfg.mask, cfg.time.dt, cfg.time.nt)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nt, self.mask.grid.nu)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def restrict(self, f: np.ndarray) -> np.ndarray:
        return np.where(self.mask.support, f, 0.0)

    def inner(self, f: np.ndarray, g: np.ndarray) -> float:
        return float(self.dt * np.sum(self.mask.quadrature * f * g))

    def norm(self, f: np.ndarray) -> float:
        return float(np.sqrt(max(self.inner(f, f), 0.0)))

    def random(self, rng: np.random.Generator) -> np.ndarray:
        return self.restrict(rng.standard_normal(self.shape))


class AdmissibleSet:
    """Closed convex subset of the control space."""

    space: ControlSpace

    def project(self, c: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def start(self) -> np.ndarray:
        return self.space.zeros()

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class Unconstrained(AdmissibleSet):
    space: ControlSpace

    def project(self, c):
        return self.space.restrict(c)

    def sample(self, rng):
        return self.space.random(rng) * rng.uniform(0.0, 10.0)


@dataclass(frozen=True)
class Ball(AdmissibleSet):
    """``{f : ||f - center|| <= radius}``."""

    space: ControlSpace
    center: np.ndarray
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ConfigurationError(f"admissible.radius must be positive, got {self.radius!r}")
        if np.shape(self.center) != self.space.shape:
            raise ConfigurationError(f"admissible.center: expected shape {self.space.shape}")

    def project(self, c):
        c = self.space.restrict(c)
        d = c - self.center
        dist = self.space.norm(d)
        # points already on the sphere (up to rounding) are returned as-is so P(P(c)) == P(c)
        if dist <= self.radius * (1.0 + 8.0 * np.finfo(float).eps):
            return c
        return self.center + (self.radius / dist) * d

    def start(self):
        return np.array(self.center, dtype=float)

    def sample(self, rng):
        d = self.space.random(rng)
        d *= self.radius * rng.uniform() ** 0.5 / max(self.space.norm(d), 1e-300)
        return self.center + d


@dataclass(frozen=True)
class Box(AdmissibleSet):
    """Pointwise bounds ``lower <= f <= upper`` on the control region."""

    space: ControlSpace
    lower: np.ndarray | float
    upper: np.ndarray | float

    def __post_init__(self):
        if np.any(np.asarray(self.lower) > np.asarray(self.upper)):
            raise ConfigurationError("admissible: box lower bound exceeds upper bound")

    def project(self, c):
        return self.space.restrict(np.clip(c, self.lower, self.upper))

    def start(self):
        return self.project(self.space.zeros())

    def sample(self, rng):
        lo = np.broadcast_to(self.lower, self.space.shape)
        hi = np.broadcast_to(self.upper, self.space.shape)
        return self.space.restrict(lo + rng.uniform(size=self.space.shape) * (hi - lo))


def singleton_zero(space: ControlSpace) -> Box:
    return Box(space, 0.0, 0.0)


# ---------------------------------------------------------------------------
# cost


@dataclass(frozen=True)
class CostConfig:
    M: float
    z_d: np.ndarray | None

    def __post_init__(self):
        if not self.M > 0:
            raise ConfigurationError(f"control.M must be positive, got {self.M!r}")

    @classmethod
    def of(cls, cfg: ProblemConfig) -> "CostConfig":
        return cls(cfg.M, cfg.z_d)


def evaluate_cost(state: StateTrajectory, f: np.ndarray, cost: CostConfig, space: ControlSpace):
    """Return ``(J, fidelity, control_term)`` by right-endpoint quadrature in time."""
    u = state.u
    z = np.zeros_like(u) if cost.z_d is None else cost.z_d
    if z.shape != u.shape:
        raise ConfigurationError(f"target has {z.shape[0]} levels, state has {u.shape[0]}")
    if np.shape(f) != space.shape:
        raise ConfigurationError(f"control has shape {np.shape(f)}, expected {space.shape}")
    grid = space.mask.grid
    err = u[1:] - z[1:]
    fidelity = 0.5 * space.dt * float(np.sum(grid.mass * err * err))
    control = 0.5 * cost.M * space.inner(f, f)
    return fidelity + control, fidelity, control


def stationarity_residual(f: np.ndarray, grad: np.ndarray, admissible: AdmissibleSet, step: float = 1.0) -> float:
    """``||f - P(f - step * grad)||``; zero exactly when the variational inequality holds.

    With ``grad = phi + M f`` and ``step = 1/M`` this is ``||f - P(-phi / M)||``.
    """
    return admissible.space.norm(f - admissible.project(f - step * grad))


def variational_inequality(f: np.ndarray, phi_levels: np.ndarray, M: float, g: np.ndarray, space: ControlSpace) -> float:
    """``<g - f, phi> + M <g - f, f>`` over the control region."""
    return space.inner(g - f, phi_levels) + M * space.inner(g - f, f)


# ---------------------------------------------------------------------------
# optimiser


# relative size of a change in J that the cost evaluation cannot resolve
_ROUNDING = 10.0 * np.finfo(float).eps


@dataclass
class OptimizerOptions:
    step0: float | None = None  # defaults to 1/M
    sigma: float = 1e-4
    backtrack: float = 0.5
    tol: float = 1e-8
    max_iter: int = 200
    max_backtracks: int = 40
    bb: bool = True

    def __post_init__(self):
        if not 0 < self.sigma < 1 or not 0 < self.backtrack < 1:
            raise ConfigurationError("optimizer.sigma and optimizer.backtrack must lie in (0, 1)")
        if not self.tol > 0 or self.max_iter < 0:
            raise ConfigurationError("optimizer.tol must be positive and optimizer.max_iter non-negative")


@dataclass
class IterationRecord:
    iter: int
    J: float
    fidelity: float
    control: float
    residual: float
    step: float
    backtracks: int


@dataclass
class OptimizationResult:
    f: np.ndarray
    J: float
    history: list[IterationRecord]
    converged: bool
    state: StateTrajectory
    adjoint: AdjointTrajectory
    gradient: np.ndarray
    message: str = ""

    @property
    def residual(self) -> float:
        return self.history[-1].residual if self.history else float("nan")

    def J_history(self) -> np.ndarray:
        return np.array([h.J for h in self.history])


@dataclass
class _Eval:
    f: np.ndarray
    state: StateTrajectory
    J: float
    fidelity: float
    control: float
    adjoint: AdjointTrajectory | None = None
    grad: np.ndarray | None = None


def _evaluate(cfg: ProblemConfig, f: np.ndarray, cost: CostConfig, space: ControlSpace) -> _Eval:
    state = solve_forward(cfg, f, keep_factors=True)
    J, fid, ctl = evaluate_cost(state, f, cost, space)
    return _Eval(f, state, J, fid, ctl)


def _with_gradient(cfg: ProblemConfig, ev: _Eval) -> _Eval:
    ev.adjoint = solve_adjoint(ev.state, cfg)
    ev.grad = cost_gradient(ev.adjoint, ev.f, cfg.M, cfg.mask)
    ev.state.factors = None
    return ev


def optimize(cfg: ProblemConfig, admissible: AdmissibleSet, opts: OptimizerOptions | None = None,
             f0: np.ndarray | None = None) -> OptimizationResult:
    """Projected gradient with Armijo backtracking on the reduced cost.

    The trial step is ``1/M`` at the first iteration, then a Barzilai-Borwein
    estimate if ``opts.bb`` (otherwise the last accepted step).  A step is
    accepted when ``J(f+) <= J(f) + sigma <grad, f+ - f>``, so the cost history
    never increases.  Convergence is declared when the projection fixed-point
    residual ``||f - P(-phi / M)||`` drops below ``opts.tol``.
    """
    opts = opts or OptimizerOptions()
    space = admissible.space
    cost = CostConfig.of(cfg)
    f = admissible.project(admissible.start() if f0 is None else f0)
    cur = _with_gradient(cfg, _evaluate(cfg, f, cost, space))
    step = opts.step0 if opts.step0 is not None else 1.0 / cfg.M
    history: list[IterationRecord] = []
    prev_f = prev_grad = None
    converged = False
    message = "maximum iterations reached"
    backtracks = 0

    for it in range(opts.max_iter + 1):
        res = stationarity_residual(cur.f, cur.grad, admissible, 1.0 / cfg.M)
        history.append(IterationRecord(it, cur.J, cur.fidelity, cur.control, res, step if it else 0.0, backtracks))
        logger.debug("iter %d J=%.10e residual=%.3e", it, cur.J, res)
        if res <= opts.tol:
            converged, message = True, "stationarity tolerance reached"
            break
        if it == opts.max_iter:
            break
        if opts.bb and prev_f is not None:
            s = cur.f - prev_f
            y = cur.grad - prev_grad
            sy = space.inner(s, y)
            if sy > 0:
                step = float(np.clip(space.inner(s, s) / sy, 1e-10, 1e10))
        trial = step
        accepted = None
        floor = _ROUNDING * max(abs(cur.J), np.finfo(float).tiny)
        for backtracks in range(opts.max_backtracks + 1):
            f_new = admissible.project(cur.f - trial * cur.grad)
            decrease = space.inner(cur.grad, f_new - cur.f)
            if decrease >= 0 or -decrease <= floor:
                # the Armijo test cannot resolve a change this small in J
                message = "stalled: predicted decrease below rounding level of J"
                break
            try:
                cand = _evaluate(cfg, f_new, cost, space)
            except NumericalError:
                trial *= opts.backtrack
                continue
            if cand.J <= cur.J + opts.sigma * decrease:
                accepted = cand
                break
            trial *= opts.backtrack
        if accepted is None:
            if not message.startswith("stalled"):
                message = "line search failed"
            break
        prev_f, prev_grad = cur.f, cur.grad
        cur = _with_gradient(cfg, accepted)
        step = trial

    return OptimizationResult(cur.f, cur.J, history, converged, cur.state, cur.adjoint, cur.grad, message)

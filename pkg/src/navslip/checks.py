"""Numerical self-checks: adjoint gradient vs finite differences, duality,
the discrete energy inequality and sampled first-order optimality.

Each check returns plain rows (dicts) so the CLI can write them as CSV and
tests can assert on them.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .adjoint import cost_gradient, solve_adjoint, solve_linearized
from .control import AdmissibleSet, ControlSpace, CostConfig, evaluate_cost, variational_inequality
from .fields import BoundaryData
from .grid import TimeGrid
from .forward import BcSpec, ProblemConfig, energy_balance, project_divergence_free, solve_forward


def _cost(cfg: ProblemConfig, f, space: ControlSpace) -> float:
    return evaluate_cost(solve_forward(cfg, f), f, CostConfig.of(cfg), space)[0]


def random_direction(space: ControlSpace, rng: np.random.Generator) -> np.ndarray:
    d = space.random(rng)
    return d / space.norm(d)


def gradient_check(cfg: ProblemConfig, f: np.ndarray, directions: int = 5, eps=(1e-4,), seed: int = 0) -> list[dict]:
    """Central differences of the reduced cost against ``<grad, d>`` for random unit directions."""
    space = ControlSpace.of(cfg)
    rng = np.random.default_rng(seed)
    state = solve_forward(cfg, f)
    grad = cost_gradient(solve_adjoint(state, cfg), f, cfg.M, cfg.mask)
    rows = []
    for k in range(directions):
        d = random_direction(space, rng)
        exact = space.inner(grad, d)
        for e in eps:
            fd = (_cost(cfg, f + e * d, space) - _cost(cfg, f - e * d, space)) / (2.0 * e)
            rows.append({"direction": k, "eps": float(e), "adjoint": exact, "finite_difference": fd,
                         "rel_error": abs(fd - exact) / max(abs(exact), 1e-300)})
    return rows


def duality_check(cfg: ProblemConfig, f: np.ndarray, seed: int = 0) -> float:
    """Relative gap in ``sum_n (s^n, v^n) = <phi[s], g>`` for random ``g`` and source ``s``."""
    space = ControlSpace.of(cfg)
    rng = np.random.default_rng(seed)
    state = solve_forward(cfg, f)
    g = space.random(rng)
    s = rng.standard_normal(state.u.shape)
    v = solve_linearized(state, cfg, g).v
    phi = solve_adjoint(state, cfg, source=s).phi
    lhs = cfg.time.dt * float(np.sum(cfg.grid.mass * s[1:] * v[1:]))
    rhs = space.inner(phi[:-1], g)
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)


def random_solenoidal(grid, rng: np.random.Generator, amplitude: float = 1.0) -> np.ndarray:
    u = rng.standard_normal(grid.nu) * amplitude
    u[grid.mass == 0] = 0.0
    return project_divergence_free(grid, u)


def energy_check(cfg: ProblemConfig, samples: int = 20, steps: int | None = None, seed: int = 0) -> list[dict]:
    """Per-step energy balance from random solenoidal starts with zero data.

    ``excess`` is ``lhs`` (which must be <= 0) relative to the energy at the
    start of the step; ``slack`` is the deviation of ``lhs`` from its exact
    value for the scheme, on the same scale.
    """
    g = cfg.grid
    rng = np.random.default_rng(seed)
    bc = BcSpec(cfg.bc.kind, cfg.bc.alpha, BoundaryData(g))
    steps = cfg.time.nt if steps is None else steps
    base = replace(cfg, time=TimeGrid(steps * cfg.time.dt, steps), bc=bc, a=np.zeros(g.nu), z_d=None, body_force=None)
    rows = []
    for k in range(samples):
        a = random_solenoidal(g, rng)
        run = replace(base, a=a)
        u = solve_forward(run).u
        for n in range(1, steps + 1):
            e = energy_balance(g, cfg.fluid.mu, run.alpha, cfg.time.dt, u[n - 1], u[n], cfg.theta)
            rows.append({"sample": k, "step": n, "energy": e["e1"], "lhs": e["lhs"],
                         "slack": (e["lhs"] - e["expected"]) / e["e0"], "excess": e["lhs"] / e["e0"]})
    return rows


def vi_check(result, cfg: ProblemConfig, admissible: AdmissibleSet, samples: int = 100, seed: int = 0) -> dict:
    """Sampled variational inequality and the projection fixed-point residual at an optimum."""
    space = admissible.space
    rng = np.random.default_rng(seed)
    f, phi = result.f, result.adjoint.phi[:-1]
    gs = [admissible.sample(rng) for _ in range(samples)]
    vals = np.array([variational_inequality(f, phi, cfg.M, g, space) for g in gs])
    reach = max(max(space.norm(g - f) for g in gs), 1e-300)
    scale = (space.norm(phi) + cfg.M * space.norm(f)) * reach
    fixed = space.norm(f - admissible.project(-phi / cfg.M))
    return {"vi_min": float(vals.min()), "scale": float(scale), "fixed_point": fixed}

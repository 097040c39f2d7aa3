from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import small_problem
from navslip.adjoint import solve_adjoint
from navslip.checks import vi_check
from navslip.control import (
    Ball,
    Box,
    ControlSpace,
    CostConfig,
    OptimizerOptions,
    Unconstrained,
    evaluate_cost,
    optimize,
    singleton_zero,
    stationarity_residual,
)
from navslip.forward import StateTrajectory, solve_forward
from navslip.grid import TimeGrid, build_control_mask, build_grid
from navslip.linalg import ConfigurationError


@pytest.fixture(scope="module")
def unit_space():
    g = build_grid((1, 1), (8, 8))
    return g, ControlSpace(build_control_mask(g, ((0.25, 0.75), (0.25, 0.75))), TimeGrid(1.0, 4).dt, 4)


def _traj(g, u):
    return StateTrajectory(u, np.zeros((u.shape[0], g.np)), np.zeros(u.shape[0] - 1))


# cost


def test_cost_zero_when_tracking_exactly(unit_space):
    g, space = unit_space
    u = np.random.default_rng(0).standard_normal((5, g.nu))
    assert evaluate_cost(_traj(g, u), space.zeros(), CostConfig(1.0, u.copy()), space) == (0.0, 0.0, 0.0)


def test_cost_of_unit_mismatch(unit_space):
    g, space = unit_space
    u = np.zeros((5, g.nu))
    u[:, g.component == 0] = 1.0
    J, fid, ctl = evaluate_cost(_traj(g, u), space.zeros(), CostConfig(1.0, None), space)
    assert J == pytest.approx(0.5, rel=1e-14) and ctl == 0.0


def test_cost_of_control_term(unit_space):
    g, space = unit_space
    f = space.restrict(np.where(g.component == 0, 2.0, 0.0)[None, :].repeat(4, axis=0))
    u = np.zeros((5, g.nu))
    J, fid, ctl = evaluate_cost(_traj(g, u), f, CostConfig(1.0, u), space)
    assert J == pytest.approx(0.5, rel=1e-14) and fid == 0.0


def test_cost_rejects_mismatched_lengths(unit_space):
    g, space = unit_space
    u = np.zeros((5, g.nu))
    with pytest.raises(ConfigurationError):
        evaluate_cost(_traj(g, u), space.zeros(), CostConfig(1.0, np.zeros((3, g.nu))), space)
    with pytest.raises(ConfigurationError):
        evaluate_cost(_traj(g, u), np.zeros((2, g.nu)), CostConfig(1.0, None), space)
    with pytest.raises(ConfigurationError):
        CostConfig(0.0, None)


# projection


def test_ball_keeps_center(unit_space):
    _, space = unit_space
    c = space.random(np.random.default_rng(1))
    assert np.array_equal(Ball(space, c, 0.3).project(c), c)


def test_ball_scales_radially(unit_space):
    _, space = unit_space
    c = space.random(np.random.default_rng(2))
    c *= 2.0 / space.norm(c)
    np.testing.assert_allclose(Ball(space, space.zeros(), 1.0).project(c), c / 2, rtol=1e-15)


def test_box_clamps(unit_space):
    g, space = unit_space
    k = np.flatnonzero(space.mask.support)[:3]
    c = space.zeros()
    c[0, k] = [-3.0, 0.5, 2.0]
    np.testing.assert_array_equal(Box(space, -1.0, 1.0).project(c)[0, k], [-1.0, 0.5, 1.0])


def test_set_validation(unit_space):
    _, space = unit_space
    with pytest.raises(ConfigurationError):
        Ball(space, space.zeros(), 0.0)
    with pytest.raises(ConfigurationError):
        Box(space, 1.0, -1.0)


def _sets(space):
    rng = np.random.default_rng(9)
    lo = -rng.uniform(0, 1, space.shape)
    return [Ball(space, space.random(rng), 0.7), Box(space, lo, lo + rng.uniform(0, 2, space.shape)),
            Unconstrained(space), singleton_zero(space)]


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), which=st.integers(0, 3), scale=st.floats(1e-3, 1e3))
def test_projection_idempotent_and_nonexpansive(unit_space, seed, which, scale):
    _, space = unit_space
    P = _sets(space)[which]
    rng = np.random.default_rng(seed)
    a, b = scale * rng.standard_normal((2, *space.shape))
    pa, pb = P.project(a), P.project(b)
    assert np.array_equal(P.project(pa), pa)
    assert space.norm(pa - pb) <= space.norm(space.restrict(a - b)) + 1e-12 * scale


# stationarity


def test_stationarity_examples(unit_space):
    _, space = unit_space
    rng = np.random.default_rng(3)
    f, g = space.random(rng), space.random(rng)
    U = Unconstrained(space)
    assert stationarity_residual(f, space.zeros(), U) == 0.0
    assert stationarity_residual(f, g, U) == pytest.approx(space.norm(g), rel=1e-14)
    ball = Ball(space, space.zeros(), 1.0)
    f /= space.norm(f)
    assert stationarity_residual(f, -0.8 * f, ball) == pytest.approx(0.0, abs=1e-15)
    assert stationarity_residual(f, 0.8 * f, ball) > 0.5


# optimizer


def _attainable(kind="slip", M=1e-3):
    base = small_problem(kind, M=M)
    space = ControlSpace.of(base)
    f_star = space.restrict(np.full(space.shape, 0.5))
    cfg = replace(base, z_d=solve_forward(base, f_star).u)
    return cfg, space, f_star


@pytest.mark.parametrize("kind", ["dirichlet", "slip"])
def test_attainable_target_beats_the_generating_control(kind):
    cfg, space, f_star = _attainable(kind)
    adm = Box(space, -2.0, 2.0)
    res = optimize(cfg, adm, OptimizerOptions(tol=1e-7, max_iter=300))
    cost = CostConfig.of(cfg)
    J_star = evaluate_cost(solve_forward(cfg, f_star), f_star, cost, space)[0]
    J0 = evaluate_cost(solve_forward(cfg), space.zeros(), cost, space)[0]
    assert res.converged, res.message
    assert res.J <= J_star
    assert res.J < J0
    assert np.all(np.diff(res.J_history()) <= 0)
    assert res.residual <= 1e-7


def test_huge_regularization_pins_control_near_center():
    cfg = replace(small_problem("slip"), M=1e6)
    space = ControlSpace.of(cfg)
    phi0 = solve_adjoint(solve_forward(cfg), cfg).phi[:-1]
    res = optimize(cfg, Ball(space, space.zeros(), 1.0), OptimizerOptions(tol=1e-12))
    assert res.converged
    bound = space.norm(space.restrict(phi0)) / cfg.M
    assert space.norm(res.f) <= bound * (1 + 1e-6)
    assert space.norm(res.f) < 1e-5


@pytest.mark.parametrize("which", ["ball", "box", "unconstrained"])
def test_optimum_satisfies_sampled_variational_inequality(which):
    cfg = small_problem("slip", M=0.01)
    space = ControlSpace.of(cfg)
    adm = {"ball": Ball(space, space.zeros(), 0.05), "box": Box(space, -0.3, 0.3),
           "unconstrained": Unconstrained(space)}[which]
    # J ~ 3e-2 here, so the scaled residual cannot be resolved much below 3e-8
    tol = 1e-7
    res = optimize(cfg, adm, OptimizerOptions(tol=tol, max_iter=300))
    assert res.converged, res.message
    vi = vi_check(res, cfg, adm, samples=100, seed=1)
    assert vi["vi_min"] >= -1e-6 * vi["scale"]
    assert vi["fixed_point"] <= 10 * tol
    assert np.all(np.diff(res.J_history()) <= 0)


def test_iteration_cap_reports_non_convergence():
    cfg = small_problem("slip", M=0.01)
    res = optimize(cfg, Unconstrained(ControlSpace.of(cfg)), OptimizerOptions(tol=1e-14, max_iter=1))
    assert not res.converged
    assert res.message
    assert len(res.history) == 2


def test_singleton_set_is_already_optimal():
    cfg = small_problem("slip")
    res = optimize(cfg, singleton_zero(ControlSpace.of(cfg)))
    assert res.converged and len(res.history) == 1
    assert np.all(res.f == 0)

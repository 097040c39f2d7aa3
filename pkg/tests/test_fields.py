import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from navslip.fields import (
    BoundaryData,
    FieldError,
    VelocityField,
    boundary_trace_norm,
    divergence,
    dump_fields,
    gradient,
    l2_inner,
    l2_norm,
    load_fields,
    spacetime_l2,
)
from navslip.forward import project_divergence_free
from navslip.grid import build_grid


def field(grid, fn):
    return VelocityField.from_function(grid, fn).flat


def test_l2_of_ones_counts_both_components(grid8):
    one = field(grid8, lambda x, y: (1.0 + 0 * x, 1.0 + 0 * y))
    assert l2_inner(grid8, one, one) == pytest.approx(2.0, rel=1e-12)
    assert l2_inner(grid8, np.zeros(grid8.nu), one) == 0.0


def test_l2_of_linear_component_converges_to_a_third():
    g = build_grid((1, 1), (64, 64))
    u = field(g, lambda x, y: (x, 0 * y))
    # nodal trapezoid in x: error is h^2/6
    assert l2_inner(g, u, u) == pytest.approx(1 / 3, abs=g.h[0] ** 2)


def test_l2_rejects_shape_mismatch(grid8):
    with pytest.raises(FieldError):
        l2_inner(grid8, np.zeros(grid8.nu), np.zeros(grid8.nu - 1))


@pytest.mark.parametrize(
    "fn,expected",
    [
        (lambda x, y: (1.0 + 0 * x, 1.0 + 0 * y), 0.0),
        (lambda x, y: (x, -y), 0.0),
        (lambda x, y: (x, y), 2.0),
    ],
)
def test_divergence_of_linear_fields(grid8, fn, expected):
    np.testing.assert_allclose(divergence(grid8, field(grid8, fn)), expected, atol=1e-12)


@pytest.mark.parametrize("periodic", [False, True])
def test_divergence_is_minus_adjoint_of_gradient(periodic):
    g = build_grid((1.3, 0.7), (9, 7), periodic_x=periodic)
    rng = np.random.default_rng(0)
    u = rng.standard_normal(g.nu)
    u[g.is_normal] = 0.0
    q = rng.standard_normal(g.np)
    lhs = l2_inner(g, divergence(g, u).ravel(), q)
    rhs = -l2_inner(g, u, gradient(g, q))
    assert lhs == pytest.approx(rhs, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_cauchy_schwarz(seed):
    g = build_grid((1, 1), (6, 6))
    rng = np.random.default_rng(seed)
    a, c = rng.standard_normal((2, g.nu))
    assert abs(l2_inner(g, a, c)) <= l2_norm(g, a) * l2_norm(g, c) * (1 + 1e-12)


def test_trace_norm_constant_mismatch(grid8):
    c = 0.7
    u = np.where(grid8.trace_weight > 0, c, 0.0)  # every wall point, corners included
    assert boundary_trace_norm(grid8, u) == pytest.approx(2 * c, rel=1e-12)
    b = BoundaryData.from_wall_function(grid8, lambda x, y: c + 0 * x)
    assert boundary_trace_norm(grid8, b.values, b) == 0.0


def test_trace_norm_slip_channel_walls():
    g = build_grid((1, 1), (16, 16), periodic_x=True)
    alpha = 10.0
    u = field(g, lambda x, y: (y * (1 - y) / 2 + 1 / (2 * alpha), 0 * y))
    assert boundary_trace_norm(g, u) == pytest.approx(np.sqrt(2) / (2 * alpha), rel=1e-12)


def test_trace_norm_zero_iff_traces_match(grid8):
    rng = np.random.default_rng(1)
    u = rng.standard_normal(grid8.nu)
    v = u.copy()
    v[grid8.trace_weight == 0] += 1.0
    assert boundary_trace_norm(grid8, u, v) == pytest.approx(0.0, abs=1e-14)
    v[np.flatnonzero(grid8.is_trace)[3]] += 1e-3
    assert boundary_trace_norm(grid8, u, v) > 0


def test_boundary_data_rejects_normal_values(grid8):
    v = np.zeros(grid8.nu)
    v[np.flatnonzero(grid8.is_normal)[0]] = 1.0
    with pytest.raises(FieldError):
        BoundaryData(grid8, v)


def test_spacetime_l2():
    assert spacetime_l2([np.zeros(3)] * 4, 0.25) == 0.0
    c = 1.7
    assert spacetime_l2([np.array([c])] * 20, 0.05) == pytest.approx(c * 1.0, rel=1e-12)
    g = build_grid((1, 1), (8, 8))
    nt, dt = 100, 0.01
    levels = [np.where(g.component == 0, n * dt, 0.0) for n in range(1, nt + 1)]
    val = spacetime_l2(levels, dt, lambda v: l2_norm(g, v))
    assert val == pytest.approx(np.sqrt(1 / 3), rel=0.01)
    with pytest.raises(FieldError):
        spacetime_l2([], 0.1)


def test_projection_gives_solenoidal_field(grid8):
    u = project_divergence_free(grid8, np.random.default_rng(2).standard_normal(grid8.nu))
    assert np.abs(divergence(grid8, u)).max() < 1e-12
    assert np.all(u[grid8.is_normal] == 0.0)


def test_dump_round_trip(tmp_path, grid8):
    rng = np.random.default_rng(4)
    u, p = rng.standard_normal(grid8.nu), rng.standard_normal(grid8.np)
    text = dump_fields(grid8, u, p, tmp_path / "f.csv")
    assert text.splitlines()[0] == "component,nx,ny,hx,hy,rows,cols"
    back = load_fields(tmp_path / "f.csv")
    ux, uy = grid8.split(u)
    np.testing.assert_array_equal(back["ux"], ux)
    np.testing.assert_array_equal(back["uy"], uy)
    np.testing.assert_array_equal(back["p"].ravel(), p)
    # one row per grid line
    assert back["ux"].shape == grid8.ux_shape

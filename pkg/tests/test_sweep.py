import math
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest

import navslip.sweep as sweep_mod
from conftest import channel
from navslip.control import ControlSpace
from navslip.forward import solve_forward, solve_steady_stokes
from navslip.linalg import ConfigurationError
from navslip.sweep import SweepReport, SweepRow, compare, run_alpha_sweep


def _steady_run(cfg, bc):
    """Trajectory that sits on the steady channel profile for this wall condition."""
    u, _ = solve_steady_stokes(cfg.grid, bc, cfg.fluid.mu, cfg.body_force)
    st = solve_forward(replace(cfg.with_bc(bc), a=u))
    zero = np.zeros_like(st.u)
    return SimpleNamespace(f=np.zeros((cfg.time.nt, cfg.grid.nu)), J=0.0, converged=True, history=[None],
                           residual=0.0, message="", state=st, adjoint=SimpleNamespace(phi=zero))


@pytest.mark.parametrize("alpha", [10.0, 100.0, 1000.0])
def test_steady_channel_columns_match_closed_form(alpha):
    run = channel("slip", n=16, alpha=alpha, T=1.0, nt=10)
    cfg = run.problem
    ref = _steady_run(cfg, cfg.bc.dirichlet())
    res = _steady_run(cfg, cfg.bc.slip(alpha))
    row = compare(cfg, alpha, res, ref, ControlSpace.of(cfg))
    T = cfg.time.T
    # slip offset 1/(2 alpha) over the unit square, and over the two unit-length walls
    assert row.state_error == pytest.approx(math.sqrt(T) / (2 * alpha), rel=1e-8)
    assert row.state_trace == pytest.approx(math.sqrt(alpha) * math.sqrt(2 * T) / (2 * alpha), rel=1e-8)
    assert row.control_error == 0.0 and row.adjoint_error == 0.0 and row.adjoint_trace == 0.0


@pytest.fixture(scope="module")
def channel_sweep():
    run = channel("slip", n=16, alpha=10.0, T=1.0, nt=20)
    return run_alpha_sweep(run.problem, run.admissible, [10.0, 100.0, 1000.0], run.optimizer)


def test_uncontrolled_channel_rates(channel_sweep):
    rep = channel_sweep
    assert [r.alpha for r in rep.rows] == [10.0, 100.0, 1000.0]
    assert all(r.converged for r in rep.rows)
    s = rep.column("state_error")
    t = rep.column("state_trace")
    np.testing.assert_allclose(s[:-1] / s[1:], 10.0, rtol=0.05)
    np.testing.assert_allclose(t[:-1] / t[1:], math.sqrt(10.0), rtol=0.05)
    assert rep.slope("state_error") == pytest.approx(-1.0, abs=0.05)
    assert rep.slope("state_trace") == pytest.approx(-0.5, abs=0.05)


def test_singleton_set_gives_trivial_control_column(channel_sweep):
    assert np.all(channel_sweep.column("control_error") == 0)
    trend = channel_sweep.trend("control_error")
    assert trend["trivial"] and trend["ok"]
    for m in ("state_error", "state_trace"):
        assert channel_sweep.trend(m)["ok"]


def test_csv_has_one_line_per_alpha(channel_sweep):
    text = channel_sweep.to_csv()
    lines = text.strip().splitlines()
    assert lines[0].startswith("alpha,control_error")
    assert len(lines) == 4


def test_sweep_is_deterministic(channel_sweep):
    run = channel("slip", n=16, alpha=10.0, T=1.0, nt=20)
    again = run_alpha_sweep(run.problem, run.admissible, [10.0, 100.0, 1000.0], run.optimizer)
    assert again.to_csv() == channel_sweep.to_csv()


def test_failing_alpha_is_flagged_not_fatal(monkeypatch):
    run = channel("slip", n=8, alpha=10.0, T=0.2, nt=4)
    real = sweep_mod._optimize_at

    def flaky(cfg, adm, alpha, opts, f0):
        if alpha == 100.0:
            raise RuntimeError("synthetic failure")
        return real(cfg, adm, alpha, opts, f0)

    monkeypatch.setattr(sweep_mod, "_optimize_at", flaky)
    rep = run_alpha_sweep(run.problem, run.admissible, [10.0, 100.0, 1000.0], run.optimizer)
    assert [r.converged for r in rep.rows] == [True, False, True]
    assert "synthetic failure" in rep.rows[1].message
    assert math.isnan(rep.rows[1].state_error)


def test_parallel_matches_sequential_without_warm_start():
    run = channel("slip", n=8, alpha=10.0, T=0.2, nt=4)
    args = (run.problem, run.admissible, [10.0, 100.0], run.optimizer)
    seq = run_alpha_sweep(*args, warm_start=False, workers=1)
    par = run_alpha_sweep(*args, warm_start=False, workers=2)
    assert seq.to_csv() == par.to_csv()


def test_trend_rule():
    rows = [SweepRow(alpha=a, state_error=v) for a, v in [(10, 1.0), (100, 1.04), (1000, 0.3)]]
    rep = SweepReport(rows)
    t = rep.trend("state_error")
    assert t["decreasing"] and t["reduced"] and t["ok"]
    rows[1].state_error = 1.2
    assert not SweepReport(rows).trend("state_error")["ok"]


def test_rejects_bad_ladder():
    run = channel("slip", n=8, T=0.2, nt=4)
    with pytest.raises(ConfigurationError):
        run_alpha_sweep(run.problem, run.admissible, [100.0, 10.0])
    with pytest.raises(ConfigurationError):
        run_alpha_sweep(run.problem, run.admissible, [0.5, 10.0])

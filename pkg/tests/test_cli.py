import csv
import filecmp
import shutil

import numpy as np
import pytest

from navslip.cli import main, preset_names
from navslip.config import poiseuille_profile
from navslip.fields import load_fields


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_presets_are_listed(capsys):
    assert main(["presets"]) == 0
    out = capsys.readouterr().out.split()
    assert {"optimize", "attainable", "poiseuille", "poiseuille-sweep", "zero"} <= set(out)
    assert out == preset_names()


def test_zero_data_gives_zero_checkpoints(tmp_path):
    assert main(["solve", "zero", "--out", str(tmp_path)]) == 0
    files = sorted((tmp_path / "checkpoints").glob("state_*.csv"))
    assert [f.name for f in files] == [f"state_{n:05d}.csv" for n in range(5)]
    for f in files:
        for arr in load_fields(f).values():
            assert np.all(arr == 0)
    manifest = {(r["section"], r["key"]): r["value"] for r in _rows(tmp_path / "manifest.csv")}
    assert manifest[("run", "command")] == "solve"
    assert manifest[("config", "bc.alpha")] == "10.0"
    assert ("residual", "4") in manifest


def test_alpha_below_wall_bound_is_rejected(tmp_path, capsys):
    rc = main(["solve", "optimize", "--alpha", "1.2", "--out", str(tmp_path)])
    assert rc == 1
    err = capsys.readouterr().err
    assert "bc.alpha" in err and "||b||_inf + 1" in err


def test_unknown_config_is_a_validation_error(capsys):
    assert main(["solve", "no-such-preset"]) == 1
    assert "no such file or preset" in capsys.readouterr().err


def test_flag_overrides_config(tmp_path):
    assert main(["solve", "zero", "--out", str(tmp_path), "--bc", "dirichlet", "--checkpoint-every", "2"]) == 0
    manifest = {(r["section"], r["key"]): r["value"] for r in _rows(tmp_path / "manifest.csv")}
    assert manifest[("config", "bc.kind")] == "dirichlet"
    assert len(list((tmp_path / "checkpoints").glob("state_*.csv"))) == 3


def test_poiseuille_preset_matches_profile(tmp_path):
    assert main(["solve", "poiseuille", "--out", str(tmp_path)]) == 0
    last = sorted((tmp_path / "checkpoints").glob("state_*.csv"))[-1]
    ux = load_fields(last)["ux"]
    ny = ux.shape[1] - 2
    y = np.concatenate([[0.0], (np.arange(ny) + 0.5) / ny, [1.0]])
    exact = poiseuille_profile(y, 1.0, 1.0, 1.0, 10.0)
    assert np.abs(ux - exact).max() <= 1e-3 * np.abs(exact).max()


def test_gradcheck_passes_and_reports(tmp_path, capsys):
    rc = main(["gradcheck", "gradcheck", "--out", str(tmp_path), "--directions", "5", "--eps", "1e-4"])
    assert rc == 0
    rows = _rows(tmp_path / "gradcheck.csv")
    assert len(rows) == 5
    assert max(float(r["rel_error"]) for r in rows) <= 1e-5


def test_gradcheck_threshold_failure_lists_directions(tmp_path, capsys):
    rc = main(["gradcheck", "gradcheck", "--out", str(tmp_path), "--directions", "2", "--threshold", "1e-30"])
    assert rc == 3
    err = capsys.readouterr().err
    assert "direction 0" in err and "direction 1" in err


def test_gradcheck_eps_sweep_shape(tmp_path):
    eps = "1e-1,1e-2,1e-3,1e-4"
    assert main(["gradcheck", "gradcheck", "--out", str(tmp_path), "--directions", "3", "--eps", eps]) == 0
    rows = _rows(tmp_path / "gradcheck.csv")
    for d in range(3):
        err = [float(r["rel_error"]) for r in rows if r["direction"] == str(d)]
        # truncation error falls like eps^2 until it reaches the solver floor
        assert err[1] < err[0] / 50
        assert err[-1] < 1e-5


def test_energycheck(tmp_path):
    assert main(["energycheck", "gradcheck", "--out", str(tmp_path), "--samples", "3", "--steps", "4"]) == 0
    rows = _rows(tmp_path / "energy.csv")
    assert len(rows) == 12
    assert all(float(r["excess"]) <= 0 for r in rows)


def test_optimize_non_convergence_keeps_outputs(tmp_path, capsys):
    rc = main(["optimize", "gradcheck", "--out", str(tmp_path), "--max-iter", "1"])
    assert rc == 2
    assert "did not converge" in capsys.readouterr().err
    assert len(_rows(tmp_path / "history.csv")) == 2
    assert (tmp_path / "manifest.csv").exists()


def test_optimize_converges_with_optimality_checks(tmp_path):
    assert main(["optimize", "gradcheck", "--out", str(tmp_path)]) == 0
    hist = [float(r["J"]) for r in _rows(tmp_path / "history.csv")]
    assert all(b <= a for a, b in zip(hist, hist[1:]))
    manifest = {(r["section"], r["key"]): r["value"] for r in _rows(tmp_path / "manifest.csv")}
    assert float(manifest[("summary", "fixed_point")]) <= 10 * 1e-8
    assert float(manifest[("summary", "vi_min")]) >= -1e-6 * float(manifest[("summary", "vi_scale")])
    # with no checkpoint interval only the final levels are written
    assert (tmp_path / "checkpoints" / "control_00007.csv").exists()
    assert (tmp_path / "checkpoints" / "adjoint_00008.csv").exists()


def test_singleton_sweep_and_svg_slopes(tmp_path):
    assert main(["sweep", "poiseuille-sweep", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "sweep.csv")
    assert len(rows) == 7 and all(float(r["control_error"]) == 0.0 for r in rows)
    trends = {r["metric"]: r for r in _rows(tmp_path / "sweep_trends.csv")}
    assert float(trends["state_error"]["slope"]) == pytest.approx(-1.0, abs=0.05)
    svg = (tmp_path / "sweep_state_error.svg").read_text()
    assert f"slope = {float(trends['state_error']['slope']):.3f}" in svg
    assert not (tmp_path / "sweep_control_error.svg").exists()


def test_outputs_are_byte_identical(tmp_path):
    out = tmp_path / "run"
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["optimize", "gradcheck", "--out", str(out), "--max-iter", "3", "--tol", "1e-3"]) == 0
        assert main(["sweep", "poiseuille-sweep", "--out", str(out / "sweep")]) == 0
        shutil.move(out, d)
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files
    match, mismatch, errors = filecmp.cmpfiles(a, b, [str(f) for f in files], shallow=False)
    assert not mismatch and not errors

"""Command-line entry points.

    navslip solve CONFIG [--bc slip --alpha 100]
    navslip optimize CONFIG
    navslip sweep CONFIG
    navslip gradcheck CONFIG [--directions 5 --eps 1e-2,1e-3,1e-4]
    navslip energycheck CONFIG [--samples 20]

CONFIG is a YAML file or the name of a shipped preset (see ``navslip presets``).
Flags override config keys, which override built-in defaults.  Exit status:
0 ok, 1 invalid configuration, 2 numerical failure or non-convergence,
3 a check missed its threshold.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import checks
from .config import ConfigError, RunConfig, load_config
from .control import optimize
from .fields import FieldError, dump_fields
from .forward import NumericalError, solve_forward
from .grid import GridError
from .linalg import ConfigurationError, LinearSolverError
from .plotting import plot_sweep
from .sweep import METRICS, run_alpha_sweep

log = logging.getLogger("navslip")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_THRESHOLD = 0, 1, 2, 3


def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("navslip.presets").iterdir() if p.name.endswith(".yaml"))


def resolve_config(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    if name in preset_names():
        return Path(str(resources.files("navslip.presets") / f"{name}.yaml"))
    raise ConfigError("<file>", f"no such file or preset: {name!r}")


# ---------------------------------------------------------------------------
# output helpers


def _write_csv(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])
    return path


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _flatten(tree, prefix=""):
    if isinstance(tree, dict):
        for k in sorted(tree):
            yield from _flatten(tree[k], f"{prefix}{k}.")
    else:
        yield prefix[:-1], tree


def write_manifest(run: RunConfig, outdir: Path, command: str, extra=(), residuals=None) -> Path:
    """Config echo, solver settings, per-step residuals and a summary, one ``section,key,value`` row each."""
    rows = [("run", "command", command), ("run", "config", run.source or "")]
    rows += [("config", k, v if not isinstance(v, (list, dict)) else repr(v)) for k, v in _flatten(run.raw)]
    s = run.problem.solver
    rows += [("solver", "method", s.method), ("solver", "tol", s.tol), ("solver", "max_iter", s.max_iter)]
    if residuals is not None:
        rows += [("residual", n + 1, r) for n, r in enumerate(residuals)]
    rows += [("summary", k, v) for k, v in extra]
    return _write_csv(outdir / "manifest.csv", ("section", "key", "value"), rows)


def checkpoint_levels(nt: int, every: int) -> list[int]:
    if every <= 0:
        return [nt]
    return sorted(set(range(0, nt + 1, every)) | {nt})


def write_checkpoints(run: RunConfig, outdir: Path, prefix: str, u, p=None, levels=None) -> list[Path]:
    g = run.problem.grid
    nt = u.shape[0] - 1
    levels = checkpoint_levels(nt, run.checkpoint_every) if levels is None else levels
    outdir.mkdir(parents=True, exist_ok=True)
    out = []
    for n in levels:
        path = outdir / f"{prefix}_{n:05d}.csv"
        dump_fields(g, u[n], None if p is None else p[n], path)
        out.append(path)
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_solve(run: RunConfig, args) -> int:
    cfg = run.problem
    state = solve_forward(cfg)
    out = run.output_dir
    write_checkpoints(run, out / "checkpoints", "state", state.u, state.p)
    write_manifest(run, out, "solve", residuals=state.residuals,
                   extra=[("max_residual", float(np.max(state.residuals)))])
    log.info("solve: %d steps, max residual %.2e, outputs in %s", cfg.time.nt, np.max(state.residuals), out)
    return EXIT_OK


HISTORY_COLUMNS = ("iter", "J", "fidelity", "control", "residual", "step", "backtracks")


def write_history(result, path: Path) -> Path:
    return _write_csv(path, HISTORY_COLUMNS, ([getattr(h, c) for c in HISTORY_COLUMNS] for h in result.history))


def cmd_optimize(run: RunConfig, args) -> int:
    cfg, adm = run.problem, run.admissible
    result = optimize(cfg, adm, run.optimizer)
    out = run.output_dir
    write_history(result, out / "history.csv")
    vi = checks.vi_check(result, cfg, adm, samples=100)
    ck = out / "checkpoints"
    write_checkpoints(run, ck, "state", result.state.u, result.state.p)
    write_checkpoints(run, ck, "adjoint", result.adjoint.phi, result.adjoint.pi)
    write_checkpoints(run, ck, "control", result.f, levels=checkpoint_levels(cfg.time.nt - 1, run.checkpoint_every))
    J0 = result.history[0].J
    write_manifest(run, out, "optimize", extra=[
        ("J_initial", J0), ("J_final", result.J), ("iterations", len(result.history) - 1),
        ("converged", result.converged), ("residual", result.residual), ("message", result.message),
        ("vi_min", vi["vi_min"]), ("vi_scale", vi["scale"]), ("fixed_point", vi["fixed_point"]),
    ])
    print(f"J: {J0:.6e} -> {result.J:.6e} in {len(result.history) - 1} iterations ({result.message})")
    if not result.converged:
        print(f"optimizer did not converge: {result.message}", file=sys.stderr)
        return EXIT_NUMERICAL
    bad = []
    if vi["vi_min"] < -1e-6 * vi["scale"]:
        bad.append(f"variational inequality violated: min {vi['vi_min']:.3e} (scale {vi['scale']:.3e})")
    if vi["fixed_point"] > 10.0 * run.optimizer.tol:
        bad.append(f"fixed-point residual {vi['fixed_point']:.3e} exceeds 10 x tol")
    for b in bad:
        print(b, file=sys.stderr)
    return EXIT_THRESHOLD if bad else EXIT_OK


TREND_COLUMNS = ("metric", "slope", "decreasing", "reduced", "trivial", "ok")


def cmd_sweep(run: RunConfig, args) -> int:
    cfg, adm = run.problem, run.admissible
    report = run_alpha_sweep(cfg, adm, run.alphas, run.optimizer, warm_start=run.warm_start, workers=run.workers)
    out = run.output_dir
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(out / "sweep.csv")
    trends = []
    for m in (*METRICS, "cost_gap"):
        t = report.trend(m)
        trends.append((m, report.slope(m), t["decreasing"], t["reduced"], t["trivial"], t["ok"]))
    _write_csv(out / "sweep_trends.csv", TREND_COLUMNS, trends)
    plot_sweep(report, out)
    if report.reference is not None:
        write_history(report.reference, out / "reference_history.csv")
    write_manifest(run, out, "sweep", extra=[("rows", len(report.rows))])
    for row in trends:
        print(f"{row[0]:>14s}  slope {row[1]: .3f}  {'ok' if row[5] else 'NOT MONOTONE'}")
    failed = [r.alpha for r in report.rows if not r.converged]
    if failed:
        print(f"rows without convergence at alpha = {failed}", file=sys.stderr)
        return EXIT_NUMERICAL
    if not all(t[5] for t in trends):
        print("some columns do not decrease over the ladder", file=sys.stderr)
        return EXIT_THRESHOLD
    return EXIT_OK


GRAD_COLUMNS = ("direction", "eps", "adjoint", "finite_difference", "rel_error")


def cmd_gradcheck(run: RunConfig, args) -> int:
    cfg, adm = run.problem, run.admissible
    rng = np.random.default_rng(args.seed)
    f = adm.project(adm.start() + 0.5 * adm.space.random(rng))
    rows = checks.gradient_check(cfg, f, args.directions, args.eps, seed=args.seed)
    dual = checks.duality_check(cfg, f, seed=args.seed)
    out = run.output_dir
    _write_csv(out / "gradcheck.csv", GRAD_COLUMNS, ([r[c] for c in GRAD_COLUMNS] for r in rows))
    write_manifest(run, out, "gradcheck", extra=[("duality_gap", dual), ("threshold", args.threshold)])
    bad = [r for r in rows if not r["rel_error"] <= args.threshold]
    for r in rows:
        print(f"direction {r['direction']}  eps {r['eps']:.0e}  rel error {r['rel_error']:.3e}")
    print(f"duality gap {dual:.3e}")
    for r in bad:
        print(f"direction {r['direction']} at eps {r['eps']:g}: rel error {r['rel_error']:.3e} > {args.threshold:g}",
              file=sys.stderr)
    if dual > args.duality_threshold:
        print(f"duality gap {dual:.3e} > {args.duality_threshold:g}", file=sys.stderr)
    return EXIT_THRESHOLD if bad or dual > args.duality_threshold else EXIT_OK


ENERGY_COLUMNS = ("sample", "step", "energy", "lhs", "excess", "slack")


def cmd_energycheck(run: RunConfig, args) -> int:
    rows = checks.energy_check(run.problem, samples=args.samples, steps=args.steps, seed=args.seed)
    out = run.output_dir
    _write_csv(out / "energy.csv", ENERGY_COLUMNS, ([r[c] for c in ENERGY_COLUMNS] for r in rows))
    worst = max(r["excess"] for r in rows)
    write_manifest(run, out, "energycheck", extra=[("max_excess", worst), ("threshold", args.threshold)])
    print(f"{len(rows)} steps checked, largest relative excess {worst:.3e}")
    bad = [r for r in rows if r["excess"] > args.threshold]
    for r in bad[:20]:
        print(f"sample {r['sample']} step {r['step']}: excess {r['excess']:.3e}", file=sys.stderr)
    return EXIT_THRESHOLD if bad else EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "optimize": cmd_optimize,
    "sweep": cmd_sweep,
    "gradcheck": cmd_gradcheck,
    "energycheck": cmd_energycheck,
}


# ---------------------------------------------------------------------------
# argument parsing


def _eps_list(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("eps values must be positive")
    return vals


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="navslip", description="Slip vs no-slip optimal control of 2D Navier-Stokes.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    sub.add_parser("presets", help="list shipped preset configs")

    def common(p):
        p.add_argument("config", help="YAML config file or shipped preset name")
        p.add_argument("--out", dest="output.dir", help="output directory")
        p.add_argument("--checkpoint-every", dest="output.checkpoint_every", type=int)
        p.add_argument("--bc", dest="bc.kind", choices=("dirichlet", "slip"))
        p.add_argument("--alpha", dest="bc.alpha", type=float)
        p.add_argument("--solver-tol", dest="solver.tol", type=float)
        return p

    common(sub.add_parser("solve", help="forward solve; writes checkpoints and a manifest"))
    for name in ("optimize", "sweep"):
        p = common(sub.add_parser(name, help=f"run the {name} workflow"))
        p.add_argument("--tol", dest="optimizer.tol", type=float)
        p.add_argument("--max-iter", dest="optimizer.max_iter", type=int)
        if name == "sweep":
            p.add_argument("--workers", dest="sweep.workers", type=int)
            p.add_argument("--no-warm-start", dest="sweep.warm_start", action="store_const", const=False)
    p = common(sub.add_parser("gradcheck", help="adjoint gradient vs central differences"))
    p.add_argument("--directions", type=int, default=5)
    p.add_argument("--eps", type=_eps_list, default=[1e-4])
    p.add_argument("--threshold", type=float, default=1e-5)
    p.add_argument("--duality-threshold", type=float, default=1e-10)
    p.add_argument("--seed", type=int, default=0)
    p = common(sub.add_parser("energycheck", help="discrete energy inequality from random starts"))
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--threshold", type=float, default=1e-12)
    p.add_argument("--seed", type=int, default=0)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    if args.command == "presets":
        print("\n".join(preset_names()))
        return EXIT_OK
    overrides = {k: v for k, v in vars(args).items() if "." in k}
    try:
        run = load_config(resolve_config(args.config), overrides)
        return COMMANDS[args.command](run, args)
    except (ConfigurationError, GridError, FieldError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, LinearSolverError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

"""Friction-coefficient sweep: optimal control under slip versus no-slip.

For each alpha the slip problem is optimised and compared with the no-slip
optimum on the same data.  Five distances are tabulated: controls, states,
the scaled wall trace ``sqrt(alpha) (u - b)_tau``, adjoints, and the scaled
adjoint trace.  The cost gap is also recorded.  All should shrink as alpha
grows.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .control import AdmissibleSet, ControlSpace, OptimizationResult, OptimizerOptions, optimize
from .fields import boundary_trace_norm, l2_norm, spacetime_l2
from .forward import ProblemConfig
from .linalg import ConfigurationError, check_alpha

logger = logging.getLogger(__name__)

DEFAULT_ALPHAS = (10.0, 31.6, 100.0, 316.0, 1000.0, 3160.0, 10000.0)

METRICS = ("control_error", "state_error", "state_trace", "adjoint_error", "adjoint_trace")

COLUMNS = (
    "alpha",
    *METRICS,
    "J_alpha",
    "J_ref",
    "cost_gap",
    "converged",
    "iterations",
    "residual",
    "message",
)


@dataclass
class SweepRow:
    alpha: float
    control_error: float = math.nan
    state_error: float = math.nan
    state_trace: float = math.nan
    adjoint_error: float = math.nan
    adjoint_trace: float = math.nan
    J_alpha: float = math.nan
    J_ref: float = math.nan
    cost_gap: float = math.nan
    converged: bool = False
    iterations: int = 0
    residual: float = math.nan
    message: str = ""


@dataclass
class SweepReport:
    rows: list[SweepRow]
    reference: OptimizationResult | None = field(default=None, repr=False)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    @property
    def alphas(self) -> np.ndarray:
        return self.column("alpha")

    def slope(self, name: str) -> float:
        """Least-squares slope of ``log(metric)`` against ``log(alpha)``."""
        y = self.column(name)
        ok = np.isfinite(y) & (y > 0)
        if ok.sum() < 2:
            return math.nan
        return float(np.polyfit(np.log(self.alphas[ok]), np.log(y[ok]), 1)[0])

    def trend(self, name: str, step_tol: float = 0.05, final_ratio: float = 0.5) -> dict:
        """Monotone-decrease check for one column.

        ``decreasing``: every entry is at most ``(1 + step_tol)`` times the
        previous one; ``reduced``: the last entry is below ``final_ratio`` times
        the first.  An identically zero column is reported as ``trivial``.
        """
        y = self.column(name)
        finite = bool(np.all(np.isfinite(y)))
        trivial = finite and bool(np.all(y == 0.0))
        decreasing = finite and bool(np.all(y[1:] <= (1.0 + step_tol) * y[:-1]))
        reduced = finite and len(y) > 1 and bool(y[-1] < final_ratio * y[0])
        return {"decreasing": decreasing, "reduced": reduced, "trivial": trivial,
                "ok": trivial or (decreasing and reduced)}

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.rows:
            d = asdict(r)
            w.writerow([_fmt(d[c]) for c in COLUMNS])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _fmt(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


def dirichlet_reference(cfg: ProblemConfig, admissible: AdmissibleSet, opts: OptimizerOptions | None = None):
    """Optimal control of the no-slip problem; returns ``(result, adjoint)``."""
    ref_cfg = cfg.with_bc(cfg.bc.dirichlet())
    result = optimize(ref_cfg, admissible, opts)
    if not result.converged:
        logger.warning("no-slip reference did not converge: %s", result.message)
    return result, result.adjoint


def _optimize_at(cfg: ProblemConfig, admissible: AdmissibleSet, alpha: float, opts, f0):
    return optimize(cfg.with_bc(cfg.bc.slip(alpha)), admissible, opts, f0=f0)


def compare(cfg: ProblemConfig, alpha: float, result: OptimizationResult, reference: OptimizationResult,
            space: ControlSpace) -> SweepRow:
    g, dt, nt = cfg.grid, cfg.time.dt, cfg.time.nt
    b = [cfg.bc.boundary(g, n) for n in range(nt + 1)]
    u, uD = result.state.u, reference.state.u
    phi, phiD = result.adjoint.phi, reference.adjoint.phi
    sq = math.sqrt(alpha)
    return SweepRow(
        alpha=float(alpha),
        control_error=space.norm(result.f - reference.f),
        state_error=spacetime_l2(u[1:] - uD[1:], dt, lambda v: l2_norm(g, v)),
        state_trace=sq * spacetime_l2(
            [u[n] - b[n] for n in range(1, nt + 1)], dt, lambda v: boundary_trace_norm(g, v)
        ),
        adjoint_error=spacetime_l2(phi[:-1] - phiD[:-1], dt, lambda v: l2_norm(g, v)),
        adjoint_trace=sq * spacetime_l2(phi[:-1], dt, lambda v: boundary_trace_norm(g, v)),
        J_alpha=float(result.J),
        J_ref=float(reference.J),
        cost_gap=abs(float(result.J) - float(reference.J)),
        converged=bool(result.converged),
        iterations=len(result.history) - 1,
        residual=float(result.residual),
        message=result.message,
    )


def run_alpha_sweep(
    cfg: ProblemConfig,
    admissible: AdmissibleSet,
    alphas=DEFAULT_ALPHAS,
    opts: OptimizerOptions | None = None,
    warm_start: bool = True,
    workers: int = 1,
    reference: OptimizationResult | None = None,
) -> SweepReport:
    """Optimise at each alpha and tabulate distances to the no-slip optimum.

    With ``warm_start`` each alpha starts from the previous optimum and the runs
    are sequential; otherwise up to ``workers`` processes run them concurrently.
    A failing alpha yields a flagged row rather than aborting the sweep.
    """
    alphas = [float(a) for a in alphas]
    if not alphas or any(b <= a for a, b in zip(alphas, alphas[1:])):
        raise ConfigurationError(f"sweep.alphas must be non-empty and strictly increasing, got {alphas}")
    b_sup = cfg.bc.b.sup_norm() if cfg.bc.b is not None else 0.0
    for a in alphas:
        check_alpha(a, b_sup)
    space = admissible.space
    if reference is None:
        reference, _ = dirichlet_reference(cfg, admissible, opts)

    rows: list[SweepRow] = []
    if warm_start or workers <= 1:
        f0 = None
        for a in alphas:
            try:
                res = _optimize_at(cfg, admissible, a, opts, f0)
            except Exception as exc:  # noqa: BLE001 - recorded in the row
                logger.error("alpha=%g failed: %s", a, exc)
                rows.append(SweepRow(alpha=a, message=f"failed: {exc}"))
                continue
            rows.append(compare(cfg, a, res, reference, space))
            if warm_start:
                f0 = res.f
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_optimize_at, cfg, admissible, a, opts, None) for a in alphas]
            for a, fut in zip(alphas, futures):
                try:
                    rows.append(compare(cfg, a, fut.result(), reference, space))
                except Exception as exc:  # noqa: BLE001
                    logger.error("alpha=%g failed: %s", a, exc)
                    rows.append(SweepRow(alpha=a, message=f"failed: {exc}"))
    return SweepReport(rows, reference)

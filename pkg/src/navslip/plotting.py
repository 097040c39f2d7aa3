"""Log-log SVG plots of sweep columns with a fitted slope annotation."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .sweep import METRICS, SweepReport  # noqa: E402

LABELS = {
    "control_error": "control distance to no-slip optimum",
    "state_error": "state distance",
    "state_trace": "sqrt(alpha) x wall slip",
    "adjoint_error": "adjoint distance",
    "adjoint_trace": "sqrt(alpha) x adjoint wall trace",
    "cost_gap": "|J_alpha - J|",
}

_RC = {
    "svg.fonttype": "none",  # keep labels as <text> so the slope is searchable
    "svg.hashsalt": "navslip",
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


def plot_metric(report: SweepReport, name: str, path) -> Path | None:
    """Write one log-log plot; returns None when the column has no positive values."""
    x, y = report.alphas, report.column(name)
    ok = np.isfinite(y) & (y > 0)
    if not ok.any():
        return None
    slope = report.slope(name)
    path = Path(path)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.4))
        ax.loglog(x[ok], y[ok], "o-", color="C0", label=LABELS.get(name, name))
        if np.isfinite(slope):
            c = np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)
            ax.loglog(x[ok], np.exp(np.polyval(c, np.log(x[ok]))), "--", color="C1", lw=1)
        ax.set_xlabel("alpha")
        ax.set_ylabel(name)
        ax.set_title(LABELS.get(name, name), fontsize=10)
        ax.text(0.05, 0.08, f"slope = {slope:.3f}", transform=ax.transAxes)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path


def plot_sweep(report: SweepReport, outdir, stem: str = "sweep") -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    for name in (*METRICS, "cost_gap"):
        p = plot_metric(report, name, outdir / f"{stem}_{name}.svg")
        if p is not None:
            written.append(p)
    return written

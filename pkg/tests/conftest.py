import numpy as np
import pytest

from navslip.fields import BoundaryData, VelocityField
from navslip.forward import BcSpec, FluidParams, ProblemConfig, project_divergence_free
from navslip.grid import TimeGrid, build_control_mask, build_grid


def lid_data(grid, speed=1.0):
    return BoundaryData.from_wall_function(
        grid, lambda x, y: np.where(y > grid.extent[1] - 1e-9, speed * 16 * x**2 * (1 - x) ** 2, 0.0)
    )


def vortex(grid, amp=1.0):
    fn = lambda x, y: (amp * np.sin(np.pi * x) * np.cos(np.pi * y), -amp * np.cos(np.pi * x) * np.sin(np.pi * y))  # noqa: E731
    return project_divergence_free(grid, VelocityField.from_function(grid, fn).flat)


def small_problem(kind="slip", theta=1.0, n=10, nt=6, alpha=20.0, seed=3, M=0.1):
    g = build_grid((1, 1), (n, n))
    tg = TimeGrid(0.2, nt)
    rng = np.random.default_rng(seed)
    bc = BcSpec(kind, alpha if kind == "slip" else None, lid_data(g))
    z = 0.1 * rng.standard_normal((nt + 1, g.nu))
    mask = build_control_mask(g, ((0.25, 0.75), (0.25, 0.75)))
    return ProblemConfig(g, tg, bc, FluidParams(0.05), vortex(g), mask, z, M=M, theta=theta)


@pytest.fixture
def grid8():
    return build_grid((1, 1), (8, 8))


@pytest.fixture(params=["dirichlet", "slip"])
def problem(request):
    return small_problem(request.param)


def channel(kind="slip", n=16, alpha=10.0, T=1.0, nt=20, **extra):
    """Periodic channel driven by a unit body force along x."""
    from navslip.config import build_run

    tree = {
        "grid": {"resolution": [n, n], "periodic_x": True},
        "time": {"T": T, "nt": nt},
        "fluid": {"mu": 1.0},
        "bc": {"kind": kind, "alpha": alpha},
        "initial": {"preset": "zero"},
        "body_force": {"preset": "constant", "value": [1.0, 0.0]},
        "admissible": {"kind": "singleton"},
    }
    for k, v in extra.items():
        tree[k] = v
    return build_run(tree)


# acceptance lines, printed once at the end of the session
ACCEPTANCE: list[str] = []


def record(label: str, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)

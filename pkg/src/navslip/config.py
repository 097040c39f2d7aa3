"""YAML run configuration: parsing, presets and validation.

Every validation error is a :class:`ConfigError` whose message starts with
the dotted key that failed, e.g. ``bc.alpha: ...``.  Fields for the initial
velocity, wall data, targets and controls come from a small preset library
(``zero``, ``constant``, ``poiseuille``, ``taylor-vortex``, ``lid``) or, for
targets, from a recorded forward solve.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .control import Ball, Box, ControlSpace, OptimizerOptions, Unconstrained, singleton_zero
from .fields import BoundaryData, VelocityField
from .forward import BcSpec, FluidParams, ProblemConfig, project_divergence_free, solve_forward
from .grid import ControlMask, Grid, TimeGrid, build_control_mask, build_grid
from .linalg import ConfigurationError, SolverOptions
from .sweep import DEFAULT_ALPHAS


class ConfigError(ConfigurationError):
    def __init__(self, key: str, rule: str):
        super().__init__(f"{key}: {rule}")
        self.key = key
        self.rule = rule


DEFAULTS = {
    "grid": {"extent": [1.0, 1.0], "resolution": [32, 32], "periodic_x": False},
    "time": {"T": 0.5, "nt": 20, "theta": 1.0},
    "fluid": {"mu": 0.1},
    "bc": {"kind": "dirichlet", "alpha": None, "b": {"preset": "zero"}},
    "initial": {"preset": "zero", "project": True},
    "body_force": None,
    "control": {"M": 1.0, "region": [[0.25, 0.75], [0.25, 0.75]]},
    "target": {"preset": "zero"},
    "admissible": {"kind": "unconstrained"},
    "optimizer": {"tol": 1e-8, "max_iter": 200, "sigma": 1e-4, "backtrack": 0.5, "bb": True, "step0": None},
    "solver": {"method": "direct", "tol": 1e-10, "max_iter": 500},
    "sweep": {"alphas": list(DEFAULT_ALPHAS), "warm_start": True, "workers": None},
    "output": {"dir": "out", "checkpoint_every": 0},
}


# mappings replaced wholesale by an override, and preset mappings merged without key checks
_REPLACED = {"bc.b", "target", "admissible", "body_force"}
_OPEN = {"initial"}


def _merge(base: dict, over: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        key = f"{prefix}{k}"
        if k not in base:
            raise ConfigError(key, "unknown key")
        if key in _OPEN and isinstance(v, dict):
            out[k] = {**base[k], **v}
        elif key not in _REPLACED and isinstance(base[k], dict) and isinstance(v, dict):
            out[k] = _merge(base[k], v, key + ".")
        else:
            out[k] = v
    return out


def set_key(tree: dict, dotted: str, value) -> None:
    """Override one dotted key in a raw config tree (used for CLI flags)."""
    parts = dotted.split(".")
    node = tree
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(dotted, "cannot override inside a non-mapping value")
    node[parts[-1]] = value


# ---------------------------------------------------------------------------
# small typed readers


def _num(key, v, positive=False, nonneg=False) -> float:
    try:
        x = float(v)
    except (TypeError, ValueError):
        raise ConfigError(key, f"must be a number, got {v!r}") from None
    if not np.isfinite(x):
        raise ConfigError(key, f"must be finite, got {v!r}")
    if positive and not x > 0:
        raise ConfigError(key, f"must be positive, got {v!r}")
    if nonneg and x < 0:
        raise ConfigError(key, f"must be non-negative, got {v!r}")
    return x


def _int(key, v, minimum=None) -> int:
    if isinstance(v, bool) or not isinstance(v, (int, np.integer)) and not (isinstance(v, float) and v.is_integer()):
        raise ConfigError(key, f"must be an integer, got {v!r}")
    v = int(v)
    if minimum is not None and v < minimum:
        raise ConfigError(key, f"must be at least {minimum}, got {v}")
    return v


def _pair(key, v, conv):
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ConfigError(key, f"must be a list of two values, got {v!r}")
    return tuple(conv(f"{key}[{i}]", x) for i, x in enumerate(v))


# ---------------------------------------------------------------------------
# field presets


def poiseuille_profile(y, height: float = 1.0, mu: float = 1.0, gradient: float = 1.0, alpha: float | None = None):
    """Channel profile ``G/(2 mu) y (H - y)`` plus the slip offset ``G H / (2 alpha)``."""
    u = gradient / (2.0 * mu) * y * (height - y)
    if alpha is not None:
        u = u + gradient * height / (2.0 * alpha)
    return u


def _velocity_preset(key: str, spec, grid: Grid) -> np.ndarray:
    if spec is None:
        return np.zeros(grid.nu)
    if not isinstance(spec, dict) or "preset" not in spec:
        raise ConfigError(key, "must be a mapping with a 'preset' entry")
    name = spec["preset"]
    amp = _num(f"{key}.amplitude", spec.get("amplitude", 1.0))
    Lx, Ly = grid.extent
    if name == "zero":
        return np.zeros(grid.nu)
    if name == "constant":
        vx, vy = _pair(f"{key}.value", spec.get("value", [0.0, 0.0]), _num)
        return VelocityField.from_function(grid, lambda x, y: (vx + 0 * x, vy + 0 * y)).flat
    if name == "poiseuille":
        mu = _num(f"{key}.mu", spec.get("mu", 1.0), positive=True)
        G = _num(f"{key}.gradient", spec.get("gradient", 1.0))
        alpha = spec.get("alpha")
        alpha = None if alpha is None else _num(f"{key}.alpha", alpha, positive=True)
        return VelocityField.from_function(
            grid, lambda x, y: (amp * poiseuille_profile(y, Ly, mu, G, alpha), 0 * y)
        ).flat
    if name == "taylor-vortex":
        kx, ky = np.pi / Lx, np.pi / Ly
        return VelocityField.from_function(
            grid,
            lambda x, y: (amp * np.sin(kx * x) * np.cos(ky * y), -amp * (kx / ky) * np.cos(kx * x) * np.sin(ky * y)),
        ).flat
    raise ConfigError(f"{key}.preset", f"unknown preset {name!r} (zero, constant, poiseuille, taylor-vortex)")


def _boundary_preset(key: str, spec, grid: Grid) -> BoundaryData:
    if spec is None:
        return BoundaryData(grid)
    if not isinstance(spec, dict) or "preset" not in spec:
        raise ConfigError(key, "must be a mapping with a 'preset' entry")
    name = spec["preset"]
    amp = _num(f"{key}.amplitude", spec.get("amplitude", 1.0))
    Lx, Ly = grid.extent
    if name == "zero":
        return BoundaryData(grid)
    if name == "lid":
        # tangential speed on the top wall, vanishing with zero slope at the corners
        top = Ly - 1e-9 * Ly

        def fn(x, y):
            s = x / Lx
            return np.where(y > top, amp * 16.0 * s**2 * (1.0 - s) ** 2, 0.0)

        return BoundaryData.from_wall_function(grid, fn)
    if name == "constant":
        return BoundaryData.from_wall_function(grid, lambda x, y: amp + 0.0 * x)
    raise ConfigError(f"{key}.preset", f"unknown preset {name!r} (zero, lid, constant)")


def _control_preset(key: str, spec, grid: Grid, mask: ControlMask, nt: int) -> np.ndarray:
    v = _velocity_preset(key, spec, grid)
    return np.broadcast_to(np.where(mask.support, v, 0.0), (nt, grid.nu)).copy()


# ---------------------------------------------------------------------------
# the assembled run


@dataclass
class RunConfig:
    raw: dict
    problem: ProblemConfig
    admissible: object
    optimizer: OptimizerOptions
    alphas: tuple
    warm_start: bool
    workers: int
    output_dir: Path
    checkpoint_every: int
    source: str | None = None
    recorded_control: np.ndarray | None = field(default=None, repr=False)

    @property
    def space(self) -> ControlSpace:
        return self.admissible.space


def load_raw(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    try:
        tree = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"invalid YAML: {exc}") from None
    if not isinstance(tree, dict):
        raise ConfigError("<file>", "top level must be a mapping")
    return tree


def build_run(tree: dict, source: str | None = None) -> RunConfig:
    """Validate a raw config tree and build every runtime object."""
    c = _merge(DEFAULTS, tree)

    gc = c["grid"]
    extent = _pair("grid.extent", gc["extent"], lambda k, v: _num(k, v, positive=True))
    res = _pair("grid.resolution", gc["resolution"], lambda k, v: _int(k, v, minimum=4))
    grid = build_grid(extent, res, periodic_x=bool(gc["periodic_x"]))

    tc = c["time"]
    tg = TimeGrid(_num("time.T", tc["T"], positive=True), _int("time.nt", tc["nt"], minimum=1))
    theta = _num("time.theta", tc["theta"])
    if not 0.5 <= theta <= 1.0:
        raise ConfigError("time.theta", f"must lie in [0.5, 1], got {theta}")

    mu = _num("fluid.mu", c["fluid"]["mu"], positive=True)

    bcc = c["bc"]
    b = _boundary_preset("bc.b", bcc.get("b"), grid)
    kind = bcc.get("kind")
    if kind not in ("dirichlet", "slip"):
        raise ConfigError("bc.kind", f"must be 'dirichlet' or 'slip', got {kind!r}")
    alpha = None
    if kind == "slip":
        if bcc.get("alpha") is None:
            raise ConfigError("bc.alpha", "required when bc.kind is 'slip'")
        alpha = _num("bc.alpha", bcc["alpha"])
        if not alpha > b.sup_norm() + 1.0:
            raise ConfigError("bc.alpha", f"friction coefficient alpha={alpha!r} must exceed ||b||_inf + 1 = {b.sup_norm() + 1.0!r}")
    bc = BcSpec(kind, alpha, b)

    ic = c["initial"]
    a = _velocity_preset("initial", ic, grid)
    a[grid.is_normal] = 0.0
    if ic.get("project", True):
        a = project_divergence_free(grid, a)

    body = None
    if c["body_force"] is not None:
        body = _velocity_preset("body_force", c["body_force"], grid)
        body[grid.is_normal] = 0.0

    cc = c["control"]
    M = _num("control.M", cc["M"], positive=True)
    region = cc["region"]
    if not isinstance(region, (list, tuple)) or len(region) != 2:
        raise ConfigError("control.region", "must be [[x0, x1], [y0, y1]]")
    region = tuple(_pair(f"control.region[{i}]", r, _num) for i, r in enumerate(region))
    try:
        mask = build_control_mask(grid, region)
    except ValueError as exc:
        raise ConfigError("control.region", str(exc)) from None

    sc = c["solver"]
    method = sc["method"]
    if method not in ("direct", "gmres"):
        raise ConfigError("solver.method", f"must be 'direct' or 'gmres', got {method!r}")
    solver = SolverOptions(method, _num("solver.tol", sc["tol"], positive=True), _int("solver.max_iter", sc["max_iter"], 1))

    try:
        problem = ProblemConfig(grid, tg, bc, FluidParams(mu), a, mask, None, M, body, theta, solver)
    except ConfigurationError as exc:
        key, _, rule = str(exc).partition(": ")
        raise ConfigError(key, rule) if rule else exc

    space = ControlSpace.of(problem)
    z_d, recorded = _target("target", c["target"], problem, mask)
    problem.z_d = z_d
    problem.validate()

    admissible = _admissible("admissible", c["admissible"], space, grid, mask, tg.nt)

    oc = c["optimizer"]
    try:
        opts = OptimizerOptions(
            step0=None if oc.get("step0") is None else _num("optimizer.step0", oc["step0"], positive=True),
            sigma=_num("optimizer.sigma", oc["sigma"]),
            backtrack=_num("optimizer.backtrack", oc["backtrack"]),
            tol=_num("optimizer.tol", oc["tol"], positive=True),
            max_iter=_int("optimizer.max_iter", oc["max_iter"], 0),
            bb=bool(oc["bb"]),
        )
    except ConfigurationError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("optimizer", str(exc)) from None

    swc = c["sweep"]
    alphas = swc["alphas"]
    if not isinstance(alphas, (list, tuple)) or not alphas:
        raise ConfigError("sweep.alphas", "must be a non-empty list")
    alphas = tuple(_num(f"sweep.alphas[{i}]", x) for i, x in enumerate(alphas))
    if any(y <= x for x, y in zip(alphas, alphas[1:])):
        raise ConfigError("sweep.alphas", "must be strictly increasing")
    if alphas[0] <= b.sup_norm() + 1.0:
        raise ConfigError("sweep.alphas", f"every alpha must exceed ||b||_inf + 1 = {b.sup_norm() + 1.0!r}")
    workers = swc.get("workers")
    workers = (os.cpu_count() or 1) if workers is None else _int("sweep.workers", workers, 1)

    out = c["output"]
    return RunConfig(
        raw=c,
        problem=problem,
        admissible=admissible,
        optimizer=opts,
        alphas=alphas,
        warm_start=bool(swc["warm_start"]),
        workers=workers,
        output_dir=Path(str(out["dir"])),
        checkpoint_every=_int("output.checkpoint_every", out["checkpoint_every"], 0),
        source=source,
        recorded_control=recorded,
    )


def load_config(path, overrides: dict | None = None) -> RunConfig:
    tree = load_raw(path)
    for k, v in (overrides or {}).items():
        if v is not None:
            set_key(tree, k, v)
    return build_run(tree, source=str(path))


def _target(key, spec, problem: ProblemConfig, mask: ControlMask):
    g, nt = problem.grid, problem.time.nt
    if spec is None:
        return None, None
    if not isinstance(spec, dict) or "preset" not in spec:
        raise ConfigError(key, "must be a mapping with a 'preset' entry")
    if spec["preset"] == "recorded":
        # forward solve with a reference control; the target is attainable by construction
        bc_kind = spec.get("bc", "dirichlet")
        if bc_kind not in ("dirichlet", "slip"):
            raise ConfigError(f"{key}.bc", f"must be 'dirichlet' or 'slip', got {bc_kind!r}")
        bc = problem.bc.dirichlet() if bc_kind == "dirichlet" else problem.bc
        if bc.kind == "slip" and bc.alpha is None:
            raise ConfigError(f"{key}.bc", "slip recording needs bc.alpha")
        f_rec = _control_preset(f"{key}.control", spec.get("control", {"preset": "zero"}), g, mask, nt)
        z = solve_forward(problem.with_bc(bc), f_rec).u
        return z, f_rec
    v = _velocity_preset(key, spec, g)
    return np.broadcast_to(v, (nt + 1, g.nu)).copy(), None


def _admissible(key, spec, space: ControlSpace, grid: Grid, mask: ControlMask, nt: int):
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(key, "must be a mapping with a 'kind' entry")
    kind = spec["kind"]
    try:
        if kind == "unconstrained":
            return Unconstrained(space)
        if kind == "singleton":
            return singleton_zero(space)
        if kind == "ball":
            center = _control_preset(f"{key}.center", spec.get("center", {"preset": "zero"}), grid, mask, nt)
            return Ball(space, center, _num(f"{key}.radius", spec.get("radius"), positive=True))
        if kind == "box":
            lo = _num(f"{key}.lower", spec.get("lower"))
            hi = _num(f"{key}.upper", spec.get("upper"))
            if lo > hi:
                raise ConfigError(key, f"lower={lo} exceeds upper={hi}")
            return Box(space, lo, hi)
    except ConfigError:
        raise
    except ConfigurationError as exc:
        raise ConfigError(key, str(exc)) from None
    raise ConfigError(f"{key}.kind", f"unknown kind {kind!r} (unconstrained, singleton, ball, box)")


def dump_raw(tree: dict) -> str:
    return yaml.safe_dump(tree, sort_keys=True)

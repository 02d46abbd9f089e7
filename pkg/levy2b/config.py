"""Problem configuration: TOML files with flat dotted keys, validated with every error collected."""

import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .bsdej import SpaceTimeGrid, cfl_max_dt, check_cfl
from .controls import (ControlGrid, ControlPoint, GeneratorSpec, JumpSlope, LevyMeasure,
                       validate_control_grid)
from .errors import ConfigError, ExprSyntaxError, Levy2bError
from .spec_lang import Const, Expr, parse, to_source

logger = logging.getLogger(__name__)

THREADS_ENV = "LEVY2B_THREADS"

DEFAULT_TOLERANCES = {
    "cross_route": 2e-2,
    "closed_form": 2e-2,
    "linear_identity": 1e-12,
    "minimum_condition": 1e-10,
    "factorization": 1e-12,
    "static_dynamic": 1e-2,
    "mc_bias": 2e-3,
    "convergence_ratio": 1.5,
    "doleans_value": 1e-6,
}


def worker_count() -> int:
    """Worker threads: LEVY2B_THREADS, with 0 or unset meaning one per CPU."""
    raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
    try:
        requested = int(raw)
    except ValueError:
        logger.warning("ignoring non-integer %s=%r", THREADS_ENV, raw)
        requested = 0
    if requested <= 0:
        return os.cpu_count() or 1
    return requested


@dataclass
class RunSettings:
    seed: int = 0
    n_paths: int = 100_000
    path_dt: float = 0.01
    region: tuple[float, float] = (-2.0, 2.0)
    x_probe: list[float] = field(default_factory=lambda: [0.0])
    n_picard: int = 2
    split_time: float = 0.5
    gaps: list[float] = field(default_factory=lambda: [0.1, 0.2, 0.4, 0.8])
    comparison_pairs: int = 20
    convergence_levels: int = 2
    closed_form: Expr | None = None
    moment_paths: int = 20_000
    qv_paths: int = 200
    expect_static_optimal: bool = False
    expect_nonconvex_gap: bool = False
    tolerances: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))


@dataclass
class FenchelSettings:
    a: float = 1.0
    h: Expr = field(default_factory=lambda: parse("0.25*x^2"))  # x stands for the curvature argument
    gamma_min: float = -4.0
    gamma_max: float = 4.0
    gamma_step: float = 1e-3
    oracle: float | None = 0.25
    random_instances: int = 10


@dataclass
class ViscositySettings:
    p_values: list[float] = field(default_factory=lambda: [-2.0, -0.5, 0.5, 2.0])
    q_values: list[float] = field(default_factory=lambda: [-1.0, 1.0])
    x_window: int | None = 2
    scheme_constant: float = 5.0
    corruption: float = 0.5
    q_margin: float = 1e-3
    time_margin: float = 1.0


@dataclass
class ProblemConfig:
    path: Path | None
    source: bytes
    grid: SpaceTimeGrid
    controls: ControlGrid
    control_bounds: tuple[float, float, float]
    generator: GeneratorSpec
    terminal: Expr
    run: RunSettings
    fenchel: FenchelSettings
    viscosity: ViscositySettings
    nt_auto: bool = True
    safety_factor: float = 0.9

    def describe(self) -> dict[str, Any]:
        return {
            "grid": {"x_min": self.grid.x_min, "x_max": self.grid.x_max, "nx": self.grid.nx,
                     "T": self.grid.T, "nt": self.grid.nt, "dx": self.grid.dx, "dt": self.grid.dt},
            "controls": [c.describe() for c in self.controls],
            "generator": self.generator.describe(),
            "terminal": to_source(self.terminal),
        }


class _Reader:
    """Typed access to a nested TOML table that records errors instead of raising."""

    _MISSING = object()

    def __init__(self, data: dict[str, Any]):
        self.data = data
        self.errors: list[str] = []

    def raw(self, key: str, default: Any = _MISSING) -> Any:
        node: Any = self.data
        for part in key.split("."):
            if not isinstance(node, dict) or part not in node:
                if default is self._MISSING:
                    self.errors.append(f"{key}: missing required key")
                return None if default is self._MISSING else default
            node = node[part]
        return node

    def number(self, key: str, default: Any = _MISSING, integer: bool = False) -> Any:
        value = self.raw(key, default)
        if value is None or value is default:
            return value
        kinds = (int,) if integer else (int, float)
        if isinstance(value, bool) or not isinstance(value, kinds):
            self.errors.append(f"{key}: expected {'an integer' if integer else 'a number'}, got {value!r}")
            return None
        if not integer and not math.isfinite(value):
            self.errors.append(f"{key}: must be finite, got {value!r}")
            return None
        return int(value) if integer else float(value)

    def numbers(self, key: str, default: Any = _MISSING) -> list[float] | None:
        value = self.raw(key, default)
        if value is None or value is default:
            return value
        if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                                                  for v in value):
            self.errors.append(f"{key}: expected a list of numbers, got {value!r}")
            return None
        return [float(v) for v in value]

    def flag(self, key: str, default: bool) -> bool:
        value = self.raw(key, default)
        if not isinstance(value, bool):
            self.errors.append(f"{key}: expected true or false, got {value!r}")
            return default
        return value

    def expression(self, key: str, default: Any = _MISSING) -> Expr | None:
        value = self.raw(key, default)
        if value is None or value is default:
            return value
        if not isinstance(value, str):
            self.errors.append(f"{key}: expected an expression string, got {value!r}")
            return None
        try:
            return parse(value)
        except ExprSyntaxError as e:
            self.errors.append(f"{key}: {e}")
            return None

    def attempt(self, key: str, build, *args, **kwargs):
        try:
            return build(*args, **kwargs)
        except Levy2bError as e:
            self.errors.append(f"{key}: {e}")
            return None


def _controls(reader: _Reader):
    levels = reader.numbers("controls.a")
    jumps = reader.raw("controls.jumps", None)
    if levels is None:
        return None
    if jumps is None:
        jumps = [[] for _ in levels]
    if not isinstance(jumps, list) or len(jumps) != len(levels):
        reader.errors.append(f"controls.jumps: expected one atom list per volatility level ({len(levels)})")
        return None
    points = []
    for index, (a, atoms) in enumerate(zip(levels, jumps)):
        key = f"controls.jumps[{index}]"
        if not isinstance(atoms, list) or not all(isinstance(atom, list) and len(atom) == 2 for atom in atoms):
            reader.errors.append(f"{key}: expected a list of [mark, intensity] pairs, got {atoms!r}")
            continue
        nu = reader.attempt(key, LevyMeasure, tuple((e, lam) for e, lam in atoms))
        point = reader.attempt(f"controls.a[{index}]", ControlPoint, a, nu) if nu is not None else None
        if point is not None:
            points.append(point)
    if len(points) != len(levels):
        return None
    return reader.attempt("controls", ControlGrid, tuple(points))


def _generator(reader: _Reader):
    slope = reader.attempt("generator.jump_slope", JumpSlope,
                           reader.number("generator.jump_slope", 0.0),
                           reader.number("generator.delta", 0.5))
    h0 = reader.expression("generator.h0", Const(0.0))
    kappa_y = reader.number("generator.kappa_y", 0.0)
    kappa_z = reader.number("generator.kappa_z", 0.0)
    if slope is None or h0 is None or kappa_y is None or kappa_z is None:
        return None
    return GeneratorSpec(kappa_y, kappa_z, slope, h0)


def _grid(reader: _Reader, controls):
    x_min = reader.number("grid.x_min")
    x_max = reader.number("grid.x_max")
    nx = reader.number("grid.nx", integer=True)
    T = reader.number("grid.T")
    safety = reader.number("grid.safety_factor", 0.9)
    multiple = reader.number("grid.nt_multiple", 10, integer=True)
    nt_raw = reader.raw("grid.nt", "auto")
    if nx is not None and nx < 3:
        reader.errors.append(f"grid.nx: nx ≥ 3 required, got {nx}")
        return None, True
    if None in (x_min, x_max, nx, T, safety, multiple) or controls is None:
        return None, True
    if multiple < 1:
        reader.errors.append(f"grid.nt_multiple: must be at least 1, got {multiple}")
        return None, True
    if not 0 < safety <= 1:
        reader.errors.append(f"grid.safety_factor: must lie in (0, 1], got {safety}")
        return None, True
    nt_auto = nt_raw == "auto"
    if nt_auto:
        if not x_min < x_max:
            reader.errors.append("grid.x_min: must be below grid.x_max")
            return None, True
        dx = (x_max - x_min) / (nx - 1)
        max_dt = min(cfl_max_dt(c, dx) for c in controls)
        grid = reader.attempt("grid", SpaceTimeGrid.auto, x_min, x_max, nx, T, max_dt, safety,
                              nt_multiple=multiple)
    elif isinstance(nt_raw, int) and not isinstance(nt_raw, bool):
        grid = reader.attempt("grid", SpaceTimeGrid, x_min, x_max, nx, T, nt_raw)
    else:
        reader.errors.append(f"grid.nt: expected an integer or \"auto\", got {nt_raw!r}")
        return None, True
    if grid is not None:
        for index, c in enumerate(controls):
            reader.attempt("grid.nt" if not nt_auto else "grid.nx", check_cfl, c, grid, index)
    return grid, nt_auto


def _run(reader: _Reader) -> RunSettings:
    run = RunSettings()
    run.seed = reader.number("run.seed", run.seed, integer=True)
    run.n_paths = reader.number("run.n_paths", run.n_paths, integer=True)
    run.path_dt = reader.number("run.path_dt", run.path_dt)
    region = reader.numbers("run.region", list(run.region))
    run.x_probe = reader.numbers("run.x_probe", run.x_probe)
    run.n_picard = reader.number("run.n_picard", run.n_picard, integer=True)
    run.split_time = reader.number("run.split_time", run.split_time)
    run.gaps = reader.numbers("run.gaps", run.gaps)
    run.comparison_pairs = reader.number("run.comparison_pairs", run.comparison_pairs, integer=True)
    run.convergence_levels = reader.number("run.convergence_levels", run.convergence_levels, integer=True)
    run.closed_form = reader.expression("run.closed_form", None)
    run.moment_paths = reader.number("run.moment_paths", run.moment_paths, integer=True)
    run.qv_paths = reader.number("run.qv_paths", run.qv_paths, integer=True)
    run.expect_static_optimal = reader.flag("run.expect_static_optimal", False)
    run.expect_nonconvex_gap = reader.flag("run.expect_nonconvex_gap", False)
    if region is not None:
        if len(region) != 2 or not region[0] < region[1]:
            reader.errors.append(f"run.region: expected [lo, hi] with lo < hi, got {region}")
        else:
            run.region = (region[0], region[1])
    if run.n_paths is not None and run.n_paths < 2:
        reader.errors.append(f"run.n_paths: need at least 2 paths, got {run.n_paths}")
    if run.n_picard is not None and run.n_picard < 1:
        reader.errors.append(f"run.n_picard: must be at least 1, got {run.n_picard}")
    if run.convergence_levels is not None and run.convergence_levels < 2:
        reader.errors.append(f"run.convergence_levels: must be at least 2, got {run.convergence_levels}")
    tolerances = reader.raw("run.tol", {})
    if isinstance(tolerances, dict):
        for name in tolerances:
            if name not in DEFAULT_TOLERANCES:
                reader.errors.append(f"run.tol.{name}: unknown tolerance")
                continue
            value = reader.number(f"run.tol.{name}")
            if value is not None:
                run.tolerances[name] = value
    else:
        reader.errors.append("run.tol: expected a table of tolerances")
    return run


def _fenchel(reader: _Reader) -> FenchelSettings:
    fen = FenchelSettings()
    fen.a = reader.number("fenchel.a", fen.a)
    fen.h = reader.expression("fenchel.h", fen.h)
    fen.gamma_min = reader.number("fenchel.gamma_min", fen.gamma_min)
    fen.gamma_max = reader.number("fenchel.gamma_max", fen.gamma_max)
    fen.gamma_step = reader.number("fenchel.gamma_step", fen.gamma_step)
    fen.oracle = reader.number("fenchel.oracle", fen.oracle)
    fen.random_instances = reader.number("fenchel.random_instances", fen.random_instances, integer=True)
    if None not in (fen.gamma_min, fen.gamma_max, fen.gamma_step):
        if not fen.gamma_min < fen.gamma_max or not fen.gamma_step > 0:
            reader.errors.append("fenchel.gamma_step: need gamma_min < gamma_max and a positive step")
    return fen


def _viscosity(reader: _Reader) -> ViscositySettings:
    vis = ViscositySettings()
    vis.p_values = reader.numbers("viscosity.p", vis.p_values)
    vis.q_values = reader.numbers("viscosity.q", vis.q_values)
    window = reader.raw("viscosity.window", vis.x_window)
    if window == "global":
        vis.x_window = None
    elif isinstance(window, int) and not isinstance(window, bool) and window >= 1:
        vis.x_window = window
    else:
        reader.errors.append(f"viscosity.window: expected a positive integer or \"global\", got {window!r}")
    vis.scheme_constant = reader.number("viscosity.scheme_constant", vis.scheme_constant)
    vis.corruption = reader.number("viscosity.corruption", vis.corruption)
    vis.q_margin = reader.number("viscosity.q_margin", vis.q_margin)
    vis.time_margin = reader.number("viscosity.time_margin", vis.time_margin)
    if vis.time_margin is not None and vis.time_margin <= 0:
        reader.errors.append(f"viscosity.time_margin: must be positive, got {vis.time_margin:g}")
    return vis


def parse_config(source: bytes, path: Path | None = None) -> ProblemConfig:
    try:
        data = tomllib.loads(source.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as e:
        raise ConfigError([f"{path or '<config>'}: {e}"]) from e
    reader = _Reader(data)
    controls = _controls(reader)
    bounds = (reader.number("controls.a_min", 0.0), reader.number("controls.a_max", math.inf),
              reader.number("controls.moment_cap", math.inf))
    if controls is not None and None not in bounds:
        report = validate_control_grid(controls, bounds)
        for item in report["controls"]:
            for violation in item["violations"]:
                reader.errors.append(f"controls[{item['index']}]: {violation}")
    generator = _generator(reader)
    terminal = reader.expression("terminal.g")
    grid, nt_auto = _grid(reader, controls)
    run = _run(reader)
    fenchel = _fenchel(reader)
    viscosity = _viscosity(reader)
    if grid is not None and run.split_time is not None:
        n1 = reader.attempt("run.split_time", grid.time_index, run.split_time)
        if n1 is not None and not 0 < n1 < grid.nt:
            reader.errors.append(f"run.split_time: {run.split_time:g} must be an interior mesh time")
    if reader.errors:
        raise ConfigError(reader.errors)
    logger.debug("loaded config %s: nx=%d nt=%d dt=%.4g", path, grid.nx, grid.nt, grid.dt)
    return ProblemConfig(path, source, grid, controls, bounds, generator, terminal, run,
                         fenchel, viscosity, nt_auto, reader.number("grid.safety_factor", 0.9))


def load_config(path: str | Path) -> ProblemConfig:
    path = Path(path)
    try:
        source = path.read_bytes()
    except OSError as e:
        raise ConfigError([f"{path}: cannot read config ({e.strerror})"]) from e
    return parse_config(source, path)

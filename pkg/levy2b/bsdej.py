"""Space-time grid, Markov-chain transition kernel, and the explicit backward solver for one control."""

import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import sparse

from .controls import ControlPoint, GeneratorSpec, generator_field, h0_slice
from .errors import CFLError, ConfigError, GridMismatchError, SpecError
from .spec_lang import Expr, sample

logger = logging.getLogger(__name__)

# relative slack when comparing a step against the CFL bound
CFL_SLACK = 1e-12


@dataclass(frozen=True)
class SpaceTimeGrid:
    x_min: float
    x_max: float
    nx: int
    T: float
    nt: int
    t0: float = 0.0

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise SpecError(f"x_min must be below x_max, got [{self.x_min}, {self.x_max}]")
        if self.nx < 3:
            raise SpecError(f"nx >= 3 required, got {self.nx}")
        if self.nt < 1:
            raise SpecError(f"nt >= 1 required, got {self.nt}")
        if not self.T > self.t0:
            raise SpecError(f"horizon T={self.T} must exceed t0={self.t0}")

    @classmethod
    def auto(cls, x_min: float, x_max: float, nx: int, T: float, max_dt: float,
             safety_factor: float = 0.9, t0: float = 0.0, nt_multiple: int = 1) -> "SpaceTimeGrid":
        """Pick nt so that dt <= safety_factor * max_dt, rounded up to a multiple of nt_multiple."""
        nt = max(1, math.ceil((T - t0) / (safety_factor * max_dt)))
        nt = nt_multiple * math.ceil(nt / nt_multiple)
        return cls(x_min, x_max, nx, T, nt, t0)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.nx - 1)

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.nt

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nx)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.t0, self.T, self.nt + 1)

    def time_of(self, n: int) -> float:
        return self.t0 + n * self.dt

    def time_index(self, t: float) -> int:
        """Index of the mesh time t; off-mesh times are rejected."""
        s = (t - self.t0) / self.dt
        n = int(round(s))
        if abs(s - n) > 1e-9 or not 0 <= n <= self.nt:
            raise ConfigError([f"time {t:g} is not a mesh time of [{self.t0:g}, {self.T:g}] with dt={self.dt:g}"])
        return n

    def segment(self, n_start: int, n_end: int) -> "SpaceTimeGrid":
        """Sub-grid over the time slices n_start..n_end, same dx and dt."""
        return SpaceTimeGrid(self.x_min, self.x_max, self.nx,
                             self.time_of(n_end), n_end - n_start, self.time_of(n_start))

    def widened(self, widen: float) -> tuple["SpaceTimeGrid", int]:
        """Grid extended by about `widen` on both sides at the same dx; returns the node offset."""
        extra = int(math.ceil(widen / self.dx - 1e-9))
        pad = extra * self.dx
        wide = SpaceTimeGrid(self.x_min - pad, self.x_max + pad, self.nx + 2 * extra,
                             self.T, self.nt, self.t0)
        return wide, extra

    def refined(self, nt: int | None = None) -> "SpaceTimeGrid":
        """Half the spacing in x; nt defaults to four times the current count."""
        return SpaceTimeGrid(self.x_min, self.x_max, 2 * self.nx - 1, self.T,
                             nt if nt is not None else 4 * self.nt, self.t0)

    def region_mask(self, region: tuple[float, float]) -> np.ndarray:
        lo, hi = region
        xs = self.nodes
        return (xs >= lo - 1e-12) & (xs <= hi + 1e-12)

    def bracket(self, points: np.ndarray):
        """Bracketing nodes and upper weight for each point; points off the grid are clamped.

        Returns (lo, hi, w_hi, outside).
        """
        s = (np.asarray(points, dtype=float) - self.x_min) / self.dx
        outside = (s < 0.0) | (s > self.nx - 1)
        s = np.clip(s, 0.0, self.nx - 1)
        lo = np.minimum(np.floor(s).astype(int), self.nx - 2)
        w_hi = s - lo
        return lo, lo + 1, w_hi, outside

    def interp(self, values: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Two-node linear interpolation written as a nonnegative combination."""
        lo, hi, w_hi, _ = self.bracket(points)
        return (1.0 - w_hi) * values[lo] + w_hi * values[hi]

    def shares(self, other: "SpaceTimeGrid") -> bool:
        return (self.nx == other.nx and self.nt == other.nt
                and np.isclose(self.x_min, other.x_min) and np.isclose(self.x_max, other.x_max)
                and np.isclose(self.T, other.T) and np.isclose(self.t0, other.t0))


@dataclass
class ValueField:
    grid: SpaceTimeGrid
    data: np.ndarray  # (nt + 1, nx), row n is time t0 + n dt

    def __post_init__(self):
        expected = (self.grid.nt + 1, self.grid.nx)
        if self.data.shape != expected:
            raise GridMismatchError(f"value field shape {self.data.shape} does not match grid {expected}")

    def slice(self, n: int) -> np.ndarray:
        return self.data[n]

    @property
    def initial(self) -> np.ndarray:
        return self.data[0]

    @property
    def terminal(self) -> np.ndarray:
        return self.data[-1]

    def at(self, n: int, x: float) -> float:
        return float(self.grid.interp(self.data[n], np.array([x]))[0])


@dataclass
class TransitionKernel:
    control: ControlPoint
    grid: SpaceTimeGrid
    matrix: sparse.csr_matrix
    clamped: np.ndarray  # rows where some jump mass landed on a boundary node
    boundary: str = "absorbing"

    def row(self, i: int) -> dict[int, float]:
        start, end = self.matrix.indptr[i], self.matrix.indptr[i + 1]
        return {int(j): float(p) for j, p in zip(self.matrix.indices[start:end], self.matrix.data[start:end])}

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    def mean_displacement(self) -> np.ndarray:
        xs = self.grid.nodes
        return self.matrix @ xs - xs


@dataclass
class StepResult:
    y: np.ndarray
    z: np.ndarray
    u: np.ndarray  # (n_atoms, nx): u_i(e_k)


@dataclass
class FieldSolution:
    control: ControlPoint
    y: ValueField
    z: np.ndarray  # (nt, nx)
    u: np.ndarray  # (nt, n_atoms, nx)
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def grid(self) -> SpaceTimeGrid:
        return self.y.grid

    def u_map(self, n: int, i: int) -> dict[float, float]:
        return {float(e): float(self.u[n, k, i]) for k, e in enumerate(self.control.nu.marks)}


# ---------------------------------------------------------------------------
# Stability
# ---------------------------------------------------------------------------

def cfl_max_dt(c: ControlPoint, dx: float) -> float:
    if not dx > 0:
        raise SpecError(f"dx must be positive, got {dx}")
    return 1.0 / (c.a / (dx * dx) + c.nu.total_intensity)


def check_cfl(c: ControlPoint, grid: SpaceTimeGrid, index: int | None = None) -> float:
    """Raise CFLError unless the explicit step is monotone for c; returns max_dt / dt."""
    label = f"control #{index} ({c.describe()})" if index is not None else f"control ({c.describe()})"
    max_dt = cfl_max_dt(c, grid.dx)
    if grid.dt > max_dt * (1.0 + CFL_SLACK):
        raise CFLError(f"dt={grid.dt:.6g} exceeds the CFL bound for {label}: "
                       f"max admissible dt is {max_dt:.6g}", max_dt, index)
    drift = abs(c.nu.mean_jump)
    if drift > c.a / grid.dx * (1.0 + CFL_SLACK):
        raise CFLError(f"compensating drift {drift:.6g} exceeds a/dx={c.a / grid.dx:.6g} for {label}; "
                       f"refine dx below {c.a / drift:.6g}", max_dt, index)
    return max_dt / grid.dt


# ---------------------------------------------------------------------------
# Kernel
# ---------------------------------------------------------------------------

def build_kernel(c: ControlPoint, grid: SpaceTimeGrid, index: int | None = None) -> TransitionKernel:
    check_cfl(c, grid, index)
    nx, dx, dt = grid.nx, grid.dx, grid.dt
    inner = np.arange(1, nx - 1)
    rows, cols, vals = [np.array([0, nx - 1])], [np.array([0, nx - 1])], [np.ones(2)]

    def put(r, col, v):
        rows.append(r)
        cols.append(col)
        vals.append(np.broadcast_to(np.asarray(v, dtype=float), r.shape))

    p_diff = c.a * dt / (2.0 * dx * dx)
    shift = -dt * c.nu.mean_jump / (2.0 * dx)
    put(inner, inner - 1, p_diff - shift)
    put(inner, inner + 1, p_diff + shift)
    put(inner, inner, 1.0 - 2.0 * p_diff - dt * c.nu.total_intensity)

    clamped = np.zeros(nx, dtype=bool)
    xs = grid.nodes
    for e, lam in c.nu.atoms:
        lo, hi, w_hi, outside = grid.bracket(xs[inner] + e)
        put(inner, lo, lam * dt * (1.0 - w_hi))
        put(inner, hi, lam * dt * w_hi)
        clamped[inner[outside]] = True

    # duplicate (row, col) entries are summed on conversion
    matrix = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nx, nx)
    ).tocsr()
    matrix.sum_duplicates()
    logger.debug("kernel for %s: nnz=%d, clamped rows=%d", c.describe(), matrix.nnz, int(clamped.sum()))
    return TransitionKernel(c, grid, matrix, clamped)


def jump_reads(grid: SpaceTimeGrid, values: np.ndarray, marks: np.ndarray) -> np.ndarray:
    """(n_atoms, nx) array of interp(values, x_i + e_k) - values_i."""
    xs = grid.nodes
    if len(marks) == 0:
        return np.zeros((0, grid.nx))
    return np.stack([grid.interp(values, xs + e) - values for e in marks])


def terminal_slice(terminal: Expr | np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    """Terminal data on the nodes: an expression sampled at T, or a slice taken as-is."""
    if isinstance(terminal, np.ndarray):
        if terminal.shape != (grid.nx,):
            raise GridMismatchError(f"terminal slice has shape {terminal.shape}, grid has {grid.nx} nodes")
        return terminal.astype(float, copy=True)
    return sample(terminal, grid.T, grid.nodes)


# ---------------------------------------------------------------------------
# Backward induction
# ---------------------------------------------------------------------------

def backward_step(k: TransitionKernel, g_spec: GeneratorSpec, c: ControlPoint, next_slice: np.ndarray,
                  t: float, n_picard: int = 2) -> StepResult:
    grid = k.grid
    expected = k.matrix @ next_slice
    z = np.gradient(next_slice, grid.dx)
    u = jump_reads(grid, next_slice, c.nu.marks)
    h0 = h0_slice(g_spec, t, grid.nodes)
    y_arg = next_slice
    for _ in range(max(1, n_picard)):
        y_arg = expected + grid.dt * generator_field(g_spec, c, y_arg, z, u, h0)
    return StepResult(y_arg, z, u)


def solve_bsdej(c: ControlPoint, g_spec: GeneratorSpec, terminal: Expr | np.ndarray,
                grid: SpaceTimeGrid, n_picard: int = 2) -> FieldSolution:
    kernel = build_kernel(c, grid)
    y = np.empty((grid.nt + 1, grid.nx))
    z = np.empty((grid.nt, grid.nx))
    u = np.empty((grid.nt, len(c.nu), grid.nx))
    y[-1] = terminal_slice(terminal, grid)
    for n in range(grid.nt - 1, -1, -1):
        step = backward_step(kernel, g_spec, c, y[n + 1], grid.time_of(n), n_picard)
        y[n], z[n], u[n] = step.y, step.z, step.u
    if not np.all(np.isfinite(y)):
        raise SpecError(f"non-finite values in the solution under {c.describe()}")
    meta = {"cfl_margin": cfl_max_dt(c, grid.dx) / grid.dt, "clamped_rows": int(kernel.clamped.sum())}
    return FieldSolution(c, ValueField(grid, y), z, u, meta)


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

def boundary_influence(c: ControlPoint, g_spec: GeneratorSpec, terminal: Expr, grid: SpaceTimeGrid,
                       region: tuple[float, float], widen: float, n_picard: int = 2) -> float:
    """Sup change of y(0, .) on the region when the domain is widened on both sides."""
    base = solve_bsdej(c, g_spec, terminal, grid, n_picard).y.initial
    wide_grid, offset = grid.widened(widen)
    wide = solve_bsdej(c, g_spec, terminal, wide_grid, n_picard).y.initial[offset:offset + grid.nx]
    mask = grid.region_mask(region)
    return float(np.max(np.abs(base[mask] - wide[mask])))


def a_priori_bound(g_spec: GeneratorSpec, terminal: Expr, grid: SpaceTimeGrid) -> float:
    L = g_spec.lipschitz
    xs = grid.nodes
    sup_g = float(np.max(np.abs(terminal_slice(terminal, grid))))
    sup_h0 = max(float(np.max(np.abs(h0_slice(g_spec, t, xs)))) for t in grid.times)
    growth = 1.0 + L * grid.dt
    horizon = grid.T - grid.t0
    return math.exp(L * horizon * growth) * (sup_g + horizon * growth * sup_h0)

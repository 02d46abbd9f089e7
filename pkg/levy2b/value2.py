"""Second-order layer: value fields as a supremum over the control grid, K increments and the DPP check."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any

import numpy as np

from .bsdej import (FieldSolution, SpaceTimeGrid, TransitionKernel, ValueField, backward_step,
                    build_kernel, solve_bsdej, terminal_slice)
from .config import worker_count
from .controls import ControlGrid, GeneratorSpec
from .errors import ConfigError
from .spec_lang import Expr

logger = logging.getLogger(__name__)


@dataclass
class DynamicSolution:
    u: ValueField
    argmax: np.ndarray  # (nt, nx) control index chosen at each step


@dataclass
class StaticSolution:
    u0: np.ndarray  # (nx,) pointwise max at the initial time
    argmax0: np.ndarray
    per_control: list[FieldSolution]


@dataclass
class KIncrementField:
    grid: SpaceTimeGrid
    controls: ControlGrid
    increments: np.ndarray  # (n_controls, nt, nx)


def build_kernels(grid_ctrl: ControlGrid, grid: SpaceTimeGrid) -> list[TransitionKernel]:
    return [build_kernel(c, grid, index) for index, c in enumerate(grid_ctrl)]


def solve_dynamic(grid_ctrl: ControlGrid, g_spec: GeneratorSpec, terminal: Expr | np.ndarray,
                  grid: SpaceTimeGrid, n_picard: int = 2) -> DynamicSolution:
    kernels = build_kernels(grid_ctrl, grid)
    data = np.empty((grid.nt + 1, grid.nx))
    argmax = np.empty((grid.nt, grid.nx), dtype=int)
    data[-1] = terminal_slice(terminal, grid)
    nodes = np.arange(grid.nx)
    for n in range(grid.nt - 1, -1, -1):
        t = grid.time_of(n)
        candidates = np.stack([
            backward_step(k, g_spec, c, data[n + 1], t, n_picard).y
            for k, c in zip(kernels, grid_ctrl)
        ])
        # np.argmax returns the first maximizer, i.e. the lowest control index
        best = np.argmax(candidates, axis=0)
        argmax[n] = best
        data[n] = candidates[best, nodes]
    return DynamicSolution(ValueField(grid, data), argmax)


def solve_static(grid_ctrl: ControlGrid, g_spec: GeneratorSpec, terminal: Expr | np.ndarray,
                 grid: SpaceTimeGrid, n_picard: int = 2) -> StaticSolution:
    for index, c in enumerate(grid_ctrl):
        build_kernel(c, grid, index)  # surface CFL errors with the control index
    with ThreadPoolExecutor(max_workers=worker_count()) as executor:
        per_control = list(executor.map(
            lambda c: solve_bsdej(c, g_spec, terminal, grid, n_picard), grid_ctrl.points))
    stacked = np.stack([sol.y.initial for sol in per_control])
    best = np.argmax(stacked, axis=0)
    return StaticSolution(stacked[best, np.arange(grid.nx)], best, per_control)


# ---------------------------------------------------------------------------
# Supermartingale defects
# ---------------------------------------------------------------------------

def k_increments(u: ValueField, grid_ctrl: ControlGrid, g_spec: GeneratorSpec,
                 terminal: Expr | np.ndarray, grid: SpaceTimeGrid, n_picard: int = 2) -> KIncrementField:
    """Delta K under each control: u_n minus one backward step of u_{n+1} under that control."""
    if not np.array_equal(u.terminal, terminal_slice(terminal, grid)):
        logger.warning("value field terminal slice differs from the terminal condition")
    kernels = build_kernels(grid_ctrl, grid)
    increments = np.empty((len(grid_ctrl), grid.nt, grid.nx))
    for n in range(grid.nt):
        t = grid.time_of(n)
        for index, (k, c) in enumerate(zip(kernels, grid_ctrl)):
            increments[index, n] = u.data[n] - backward_step(k, g_spec, c, u.data[n + 1], t, n_picard).y
    return KIncrementField(grid, grid_ctrl, increments)


def minimality_report(k: KIncrementField, tolerance: float = 1e-10) -> dict[str, Any]:
    per_node_min = k.increments.min(axis=0)
    # expected K_T from each starting node when the control is held fixed
    kernels = build_kernels(k.controls, k.grid)
    totals = np.empty((len(k.controls), k.grid.nx))
    for index, kernel in enumerate(kernels):
        acc = np.zeros(k.grid.nx)
        for n in range(k.grid.nt - 1, -1, -1):
            acc = kernel.matrix @ acc + k.increments[index, n]
        totals[index] = acc
    max_min = float(per_node_min.max())
    negatives = int(np.count_nonzero(k.increments < -tolerance))
    return {
        "max_of_min_increment": max_min,
        "min_increment": float(k.increments.min()),
        "negative_increments": negatives,
        "per_node_min": per_node_min,
        "total_K": totals,
        "total_K_at_center": [float(row[k.grid.nx // 2]) for row in totals],
        "minimum_condition": max_min <= tolerance and negatives == 0,
    }


# ---------------------------------------------------------------------------
# Dynamic programming
# ---------------------------------------------------------------------------

def dpp_check(grid_ctrl: ControlGrid, g_spec: GeneratorSpec, terminal: Expr, grid: SpaceTimeGrid,
              split_time: float, region: tuple[float, float] | None = None,
              n_picard: int = 2) -> dict[str, Any]:
    n1 = grid.time_index(split_time)
    if not 0 < n1 < grid.nt:
        raise ConfigError([f"run.split_time: {split_time:g} must be an interior mesh time"])
    full = solve_dynamic(grid_ctrl, g_spec, terminal, grid, n_picard).u
    late = solve_dynamic(grid_ctrl, g_spec, terminal, grid.segment(n1, grid.nt), n_picard).u
    early_grid = grid.segment(0, n1)
    early = solve_dynamic(grid_ctrl, g_spec, late.initial, early_grid, n_picard).u
    factorization = float(np.max(np.abs(full.initial - early.initial)))

    static = solve_static(grid_ctrl, g_spec, full.data[n1], early_grid, n_picard).u0
    excess = static - full.initial
    mask = grid.region_mask(region) if region is not None else np.ones(grid.nx, dtype=bool)
    return {
        "split_index": n1,
        "factorization_diff": factorization,
        "static_over_split_excess": float(np.max(excess)),
        "static_dynamic_gap_region": float(np.max(np.abs(excess[mask]))),
    }


def nonconvex_gap(grid_ctrl: ControlGrid, g_spec: GeneratorSpec, terminal: Expr, grid: SpaceTimeGrid,
                  region: tuple[float, float], n_picard: int = 2) -> dict[str, Any]:
    dynamic = solve_dynamic(grid_ctrl, g_spec, terminal, grid, n_picard)
    static = solve_static(grid_ctrl, g_spec, terminal, grid, n_picard)
    mask = grid.region_mask(region)
    gap = np.where(mask, dynamic.u.initial - static.u0, -np.inf)
    i = int(np.argmax(gap))
    switches = int(np.count_nonzero(np.any(dynamic.argmax[:, mask] != dynamic.argmax[:1, mask], axis=1)))
    return {
        "margin": float(gap[i]),
        "x_star": float(grid.nodes[i]),
        "dynamic": float(dynamic.u.initial[i]),
        "static": float(static.u0[i]),
        "argmax_switching_steps": switches,
    }

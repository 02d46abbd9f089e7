"""Suite: cross-validation of the analytic and probabilistic routes."""

import math
from typing import Any

import numpy as np

from levy2b.bsdej import SpaceTimeGrid, cfl_max_dt
from levy2b.pide import compare_fields, convergence_study, solve_pide
from levy2b.spec_lang import Expr, parse
from levy2b.value2 import solve_dynamic

from .base import Suite

_BASE_TEMPLATES = (
    "({a})*x^2 + ({b})*x + ({c})",
    "({a})*sin(({b})*x) + ({c})",
    "({a})*max(x - ({b}), 0) + ({c})",
    "({a})*abs(x - ({b}))",
    "({a})*exp(-(x - ({b}))^2) + ({c})",
)

_BUMP_TEMPLATES = (
    "({a})*x + ({b})",
    "({a})*cos(({b})*x)",
    "({a})*(x - ({b}))^2",
    "({a})*min(x, ({b}))",
)


def random_terminal_pair(rng: np.random.Generator) -> tuple[Expr, Expr]:
    """(g1, g2) with g2 = g1 + |r| so that g1 <= g2 at every node."""
    coeff = lambda: round(float(rng.uniform(-2.0, 2.0)), 3)
    base = _BASE_TEMPLATES[rng.integers(len(_BASE_TEMPLATES))].format(a=coeff(), b=coeff(), c=coeff())
    bump = _BUMP_TEMPLATES[rng.integers(len(_BUMP_TEMPLATES))].format(a=coeff(), b=coeff())
    return parse(base), parse(f"{base} + abs({bump})")


def refine_with_cfl(controls, safety_factor: float, nt_multiple: int = 10):
    def refine(grid: SpaceTimeGrid) -> SpaceTimeGrid:
        nx = 2 * grid.nx - 1
        dx = (grid.x_max - grid.x_min) / (nx - 1)
        max_dt = min(cfl_max_dt(c, dx) for c in controls)
        return SpaceTimeGrid.auto(grid.x_min, grid.x_max, nx, grid.T, max_dt, safety_factor,
                                  grid.t0, nt_multiple)
    return refine


class CompareSuite(Suite):
    """Feynman-Kac cross-check, comparison principle and grid convergence of both routes."""

    name = "compare"
    description = "PIDE vs dynamic sup, comparison principle, convergence order"

    def run(self) -> dict[str, Any]:
        cfg = self.config
        grid, run, controls, g = cfg.grid, cfg.run, cfg.controls, cfg.generator

        pide = solve_pide(controls, g, cfg.terminal, grid, run.n_picard)
        dynamic = solve_dynamic(controls, g, cfg.terminal, grid, run.n_picard)
        diff = compare_fields(pide.u, dynamic.u, run.region)
        self.diffs["pide_vs_dynamic"] = {"sup": diff.sup_diff, "l2": diff.l2_diff, "location": diff.location}
        self.check("cross_route", diff.sup_diff <= self.tol["cross_route"], sup_diff=diff.sup_diff)

        self.outputs["pide_at_probes"] = {f"{x:g}": pide.u.at(0, x) for x in run.x_probe}
        self.outputs["dynamic_at_probes"] = {f"{x:g}": dynamic.u.at(0, x) for x in run.x_probe}
        self.outputs["argmax_agreement"] = float(np.mean(pide.argmax == dynamic.argmax))

        self._comparison_principle()

        if run.closed_form is not None:
            study = convergence_study(controls, g, cfg.terminal, grid, run.convergence_levels,
                                      run.closed_form, run.region,
                                      refine_with_cfl(controls, cfg.safety_factor), run.n_picard,
                                      min_ratio=self.tol["convergence_ratio"])
            self.outputs["convergence"] = study
            self.check("convergence", study["passed"],
                       pide_errors=study["pide"]["errors"], dynamic_errors=study["dynamic"]["errors"])
        return self.result()

    def _comparison_principle(self) -> None:
        cfg = self.config
        run = cfg.run
        rng = np.random.default_rng(run.seed)
        failures = []
        worst = -math.inf
        for pair in range(run.comparison_pairs):
            g1, g2 = random_terminal_pair(rng)
            for route, solve in (("pide", lambda t: solve_pide(cfg.controls, cfg.generator, t, cfg.grid,
                                                                run.n_picard).u.data),
                                 ("dynamic", lambda t: solve_dynamic(cfg.controls, cfg.generator, t, cfg.grid,
                                                                     run.n_picard).u.data)):
                excess = float(np.max(solve(g1) - solve(g2)))
                worst = max(worst, excess)
                if excess > 0:
                    failures.append({"pair": pair, "route": route, "excess": excess})
        self.outputs["comparison_pairs"] = run.comparison_pairs
        self.check("comparison_principle", not failures, worst_excess=worst, failures=failures)

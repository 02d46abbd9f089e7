"""Suite: analytic route on the configured problem."""

from typing import Any

import numpy as np

from levy2b.bsdej import terminal_slice
from levy2b.pide import solve_pide
from levy2b.report import field_table
from levy2b.spec_lang import sample

from .base import Suite


class SolvePIDESuite(Suite):
    """Solve the fully nonlinear PIDE and report probe values and scheme diagnostics."""

    name = "solve-pide"
    description = "Explicit monotone PIDE solve with boundary-influence diagnostic"

    def run(self) -> dict[str, Any]:
        cfg = self.config
        grid, run = cfg.grid, cfg.run
        sol = solve_pide(cfg.controls, cfg.generator, cfg.terminal, grid, run.n_picard)
        u0 = sol.u.initial

        # same problem on a domain widened by a quarter of its length on each side
        wide_grid, offset = grid.widened(0.25 * (grid.x_max - grid.x_min))
        wide = solve_pide(cfg.controls, cfg.generator, cfg.terminal, wide_grid, run.n_picard).u
        mask = grid.region_mask(run.region)
        sol.boundary_influence = float(np.max(np.abs(u0[mask] - wide.initial[offset:offset + grid.nx][mask])))

        self.outputs["u0_at_probes"] = {f"{x:g}": sol.u.at(0, x) for x in run.x_probe}
        self.outputs["cfl_margin"] = sol.cfl_margin
        self.outputs["boundary_influence"] = sol.boundary_influence
        self.outputs["argmax_share"] = np.bincount(sol.argmax[:, mask].ravel(),
                                                   minlength=len(cfg.controls)) / sol.argmax[:, mask].size

        self.check("terminal_exact", np.array_equal(sol.u.terminal, terminal_slice(cfg.terminal, grid)))
        self.check("finite", bool(np.all(np.isfinite(sol.u.data))))
        self.check("boundary_influence", sol.boundary_influence <= self.tol["closed_form"],
                   value=sol.boundary_influence)
        if run.closed_form is not None:
            exact = sample(run.closed_form, grid.t0, grid.nodes)
            err = float(np.max(np.abs(u0[mask] - exact[mask])))
            self.diffs["closed_form_sup"] = err
            self.check("closed_form", err <= self.tol["closed_form"], sup_diff=err)

        stride = max(1, grid.nt // 20)
        self.tables["pide_field"] = field_table(grid.times, grid.nodes, sol.u.data, stride=stride)
        return self.result()

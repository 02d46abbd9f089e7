"""Suite: viscosity sub/super-solution audit of the PIDE solution."""

from typing import Any

import numpy as np

from levy2b.bsdej import ValueField
from levy2b.pide import TestFunctionFamily, default_tolerance, solve_pide, viscosity_audit

from .base import Suite


class CheckViscositySuite(Suite):
    """Audit the PIDE solution with quadratic test functions, then audit a deliberately corrupted copy."""

    name = "check-viscosity"
    description = "Viscosity audit and corruption detection"

    def run(self) -> dict[str, Any]:
        cfg = self.config
        grid, run, vis = cfg.grid, cfg.run, cfg.viscosity
        fam = TestFunctionFamily(tuple(vis.p_values), tuple(vis.q_values), vis.x_window, vis.q_margin,
                                 vis.time_margin)
        tol = default_tolerance(grid, vis.scheme_constant)
        sol = solve_pide(cfg.controls, cfg.generator, cfg.terminal, grid, run.n_picard)

        audit = viscosity_audit(sol.u, fam, cfg.controls, cfg.generator, tol, run.region)
        self.outputs["audit"] = audit
        self.check("no_violations", audit["passed"], touch_points=audit["touch_points"],
                   super_violations=audit["super_violations"], sub_violations=audit["sub_violations"])

        # one-node bump in the middle of the region, half way through the horizon
        step = grid.nt // 2
        node = int(np.argmin(np.abs(grid.nodes - 0.5 * (run.region[0] + run.region[1]))))
        corrupted = sol.u.data.copy()
        corrupted[step, node] += vis.corruption
        bumped = viscosity_audit(ValueField(grid, corrupted), fam, cfg.controls, cfg.generator, tol, run.region,
                                  max_records=grid.nt * grid.nx)
        hits = [r for r in bumped["records"] if r["side"] == "sub" and r["node"] == node and r["step"] == step]
        self.outputs["corruption"] = {"step": step, "x": float(grid.nodes[node]), "size": vis.corruption,
                                      "sub_violations": bumped["sub_violations"], "hits_at_node": len(hits)}
        self.check("corruption_detected", bool(hits))
        return self.result()

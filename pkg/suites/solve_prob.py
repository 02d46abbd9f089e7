"""Suite: probabilistic route (per-control BSDEJ, static sup, dynamic sup)."""

from typing import Any

import numpy as np

from levy2b.bsdej import a_priori_bound
from levy2b.paths import mc_terminal
from levy2b.pide import linear_identity_gap
from levy2b.report import field_table
from levy2b.spec_lang import Const, sample
from levy2b.value2 import nonconvex_gap, solve_dynamic, solve_static

from .base import Suite


def driver_is_zero(cfg) -> bool:
    g = cfg.generator
    return g.kappa_y == 0 and g.kappa_z == 0 and g.slope.c == 0 and g.h0 == Const(0.0)


class SolveProbSuite(Suite):
    """Solve the 2BSDEJ on the lattice and check the sandwich, linear-case and Monte Carlo identities."""

    name = "solve-prob"
    description = "Per-control BSDEJ, static and dynamic suprema"

    def run(self) -> dict[str, Any]:
        cfg = self.config
        grid, run, controls = cfg.grid, cfg.run, cfg.controls
        dynamic = solve_dynamic(controls, cfg.generator, cfg.terminal, grid, run.n_picard)
        static = solve_static(controls, cfg.generator, cfg.terminal, grid, run.n_picard)
        mask = grid.region_mask(run.region)

        self.outputs["dynamic_at_probes"] = {f"{x:g}": dynamic.u.at(0, x) for x in run.x_probe}
        self.outputs["static_at_probes"] = {
            f"{x:g}": float(grid.interp(static.u0, np.array([x]))[0]) for x in run.x_probe}
        self.outputs["per_control_at_probes"] = [
            {f"{x:g}": sol.y.at(0, x) for x in run.x_probe} for sol in static.per_control]

        per_control_ok = all(np.all(sol.y.initial <= static.u0) for sol in static.per_control)
        self.check("sandwich", per_control_ok and bool(np.all(static.u0 <= dynamic.u.initial)),
                   static_minus_dynamic=float(np.max(static.u0 - dynamic.u.initial)))

        g = cfg.generator
        if g.kappa_z == 0 and g.slope.c == 0:
            bound = a_priori_bound(g, cfg.terminal, grid)
            sup = max(float(np.max(np.abs(sol.y.data))) for sol in static.per_control)
            self.check("a_priori_bound", sup <= bound, sup_norm=sup, bound=bound)

        if len(controls) == 1:
            gap = linear_identity_gap(controls, g, cfg.terminal, grid, run.n_picard)
            self.diffs["pide_vs_bsdej"] = gap
            self.check("linear_identity", gap <= self.tol["linear_identity"], sup_diff=gap)
            if driver_is_zero(cfg):
                self._mc_agreement(dynamic)

        if run.closed_form is not None:
            exact = sample(run.closed_form, grid.t0, grid.nodes)
            err = float(np.max(np.abs(dynamic.u.initial[mask] - exact[mask])))
            self.diffs["closed_form_sup"] = err
            self.check("closed_form", err <= self.tol["closed_form"], sup_diff=err)

        gap = nonconvex_gap(controls, g, cfg.terminal, grid, run.region, run.n_picard)
        self.outputs["dynamic_minus_static"] = gap
        if run.expect_nonconvex_gap:
            self.check("nonconvex_gap", gap["margin"] > 1e-6, margin=gap["margin"], x_star=gap["x_star"])

        stride = max(1, grid.nt // 20)
        self.tables["dynamic_field"] = field_table(grid.times, grid.nodes, dynamic.u.data, stride=stride)
        for index, sol in enumerate(static.per_control):
            self.tables[f"control_{index}_field"] = field_table(grid.times, grid.nodes, sol.y.data, sol.z,
                                                                stride=stride)
        rows = range(0, grid.nt, stride)
        self.tables["argmax"] = field_table(grid.times[list(rows)], grid.nodes,
                                            dynamic.argmax[list(rows)].astype(float)).rename(columns={"y": "control"})
        return self.result()

    def _mc_agreement(self, dynamic) -> None:
        cfg = self.config
        run = cfg.run
        (c,) = cfg.controls.points
        records = {}
        ok = True
        for x0 in run.x_probe:
            est = mc_terminal(c, cfg.terminal, x0, cfg.grid.t0, cfg.grid.T, run.path_dt, run.n_paths, run.seed)
            value = dynamic.u.at(0, x0)
            err = abs(value - est.mean)
            ok = ok and err <= 3.0 * est.std_error + self.tol["mc_bias"]
            records[f"{x0:g}"] = {"lattice": value, "mc_mean": est.mean, "mc_se": est.std_error}
        self.outputs["mc_terminal"] = records
        self.check("mc_agreement", ok)

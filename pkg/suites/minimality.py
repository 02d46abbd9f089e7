"""Suite: K increments and the discrete minimum condition."""

from typing import Any

import numpy as np
import pandas as pd

from levy2b.pide import k_rate_field, solve_pide
from levy2b.value2 import k_increments, minimality_report, solve_dynamic

from .base import Suite


class MinimalitySuite(Suite):
    """Supermartingale defects of each constant control against the dynamic value."""

    name = "minimality"
    description = "Discrete minimum condition on K"

    def run(self) -> dict[str, Any]:
        cfg = self.config
        grid, run, controls = cfg.grid, cfg.run, cfg.controls
        dynamic = solve_dynamic(controls, cfg.generator, cfg.terminal, grid, run.n_picard)
        k = k_increments(dynamic.u, controls, cfg.generator, cfg.terminal, grid, run.n_picard)
        report = minimality_report(k, self.tol["minimum_condition"])
        mask = grid.region_mask(run.region)

        totals = report.pop("total_K")
        report.pop("per_node_min")
        self.outputs.update(report)
        self.outputs["total_K_region_max"] = [float(row[mask].max()) for row in totals]
        self.check("minimum_condition", report["minimum_condition"],
                   max_of_min=report["max_of_min_increment"], negatives=report["negative_increments"])

        if len(controls) == 1:
            self.check("singleton_zero", float(np.max(np.abs(k.increments))) <= 1e-12)
        else:
            self.check("suboptimal_K_positive", max(self.outputs["total_K_region_max"]) > 0.0)

        rates = k_rate_field(solve_pide(controls, cfg.generator, cfg.terminal, grid, run.n_picard).u,
                             controls, cfg.generator)
        self.outputs["k_rate_mean"] = [float(r[:, mask].mean()) for r in rates]
        self.check("k_rate_minimum", float(rates.min(axis=0).max()) == 0.0 and float(rates.min()) >= 0.0)

        self.tables["k_totals"] = pd.DataFrame(
            {"x": grid.nodes, **{f"control_{i}": row for i, row in enumerate(totals)}})
        return self.result()

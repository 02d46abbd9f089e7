"""Suite: dynamic programming across a split time."""

from typing import Any

from levy2b.value2 import dpp_check

from .base import Suite


class DPPCheckSuite(Suite):
    name = "dpp-check"
    description = "Two-stage factorization and static-over-split bound"

    def run(self) -> dict[str, Any]:
        cfg = self.config
        run = cfg.run
        report = dpp_check(cfg.controls, cfg.generator, cfg.terminal, cfg.grid, run.split_time,
                           run.region, run.n_picard)
        self.outputs.update(report)
        self.check("factorization", report["factorization_diff"] <= self.tol["factorization"],
                   diff=report["factorization_diff"])
        self.check("static_below_dynamic", report["static_over_split_excess"] <= self.tol["minimum_condition"],
                   excess=report["static_over_split_excess"])
        if run.expect_static_optimal:
            self.check("static_equals_dynamic", report["static_dynamic_gap_region"] <= self.tol["static_dynamic"],
                       gap=report["static_dynamic_gap_region"])
        return self.result()

"""Suite: Monte Carlo checks on the simulated Levy martingales."""

from typing import Any

import numpy as np
import pandas as pd

from levy2b.controls import ControlPoint, LevyMeasure
from levy2b.paths import (PathSample, SeedSpec, doleans_exponential, mc_terminal, mean_and_error,
                          moment_estimate, pathwise_qv, qv_convergence, simulate_path, simulate_statistic)
from levy2b.spec_lang import parse

from .base import Suite

# tilt used for the Doleans-Dade check: eta on the Brownian part, gamma(e) = 0.5 (1 ^ |e|) on jumps
DOLEANS_ETA = 0.5
DOLEANS_SLOPE = 0.5
SINGLE_JUMP_VALUE = 1.5 * np.exp(-0.5)

SUMMARY_PATHS = 10_000


def _tilt(e: float) -> float:
    return DOLEANS_SLOPE * min(1.0, abs(e))


class SimulateSuite(Suite):
    """Martingale, Poisson-count, moment-estimate, Doleans-Dade and quadratic-variation checks."""

    name = "simulate"
    description = "Monte Carlo path checks"

    def run(self) -> dict[str, Any]:
        cfg = self.config
        run, grid = cfg.run, cfg.grid
        x0 = run.x_probe[0]
        horizon = grid.T - grid.t0
        identity = parse("x")

        martingale, counts = [], []
        for index, c in enumerate(cfg.controls):
            est = mc_terminal(c, identity, x0, grid.t0, grid.T, run.path_dt, run.n_paths, run.seed)
            martingale.append({"control": index, "mean": est.mean, "se": est.std_error,
                               "pass": abs(est.mean - x0) <= 3.0 * est.std_error})
            if len(c.nu):
                n_jumps = simulate_statistic(c, lambda p: float(len(p.jump_times)), x0, grid.t0, grid.T,
                                             run.path_dt, run.n_paths, run.seed)
                stat = mean_and_error(n_jumps)
                expected = c.nu.total_intensity * horizon
                counts.append({"control": index, "mean": stat.mean, "expected": expected, "se": stat.std_error,
                               "pass": abs(stat.mean - expected) <= 3.0 * stat.std_error})
        self.outputs["martingale"] = martingale
        self.check("martingale", all(m["pass"] for m in martingale))
        if counts:
            self.outputs["jump_counts"] = counts
            self.check("poisson_count", all(m["pass"] for m in counts))

        moments = moment_estimate(cfg.controls, x0, run.gaps, run.path_dt, run.moment_paths, run.seed)
        self.outputs["moment_estimate"] = moments
        self.check("moment_estimate", moments["passed"], C=moments["C"])

        self._doleans(x0)

        qv = qv_convergence(cfg.controls[0], [1e-2, 1e-3, 1e-4], run.qv_paths, run.seed, horizon)
        self.outputs["qv_convergence"] = qv
        self.check("qv_convergence", qv["passed"], rms_error=qv["rms_error"])

        self.tables["paths"] = self._summaries(cfg.controls[0], x0)
        return self.result()

    def _doleans(self, x0: float) -> None:
        cfg = self.config
        run, grid = cfg.run, cfg.grid
        # prefer a control with jumps so the compensator term is exercised
        c = next((c for c in cfg.controls if len(c.nu)), cfg.controls[0])
        values = simulate_statistic(c, lambda p: doleans_exponential(p, DOLEANS_ETA, _tilt, c), x0,
                                    grid.t0, grid.T, run.path_dt, run.n_paths, run.seed)
        stat = mean_and_error(values)
        self.outputs["doleans"] = {"mean": stat.mean, "se": stat.std_error, "min": float(values.min())}
        self.check("doleans_martingale", abs(stat.mean - 1.0) <= 3.0 * stat.std_error)
        self.check("doleans_positive", bool(np.all(values > 0)))

        one_jump = ControlPoint(1.0, LevyMeasure(((1.0, 1.0),)))
        path = PathSample(0.0, 1.0, 1.0, 0.0, np.zeros(1), np.array([0.5]), np.array([1.0]), -1.0)
        hand = doleans_exponential(path, 0.0, lambda e: 0.5, one_jump)
        self.check("doleans_single_jump", abs(hand - SINGLE_JUMP_VALUE) <= self.tol["doleans_value"], value=hand)

    def _summaries(self, c: ControlPoint, x0: float) -> pd.DataFrame:
        cfg = self.config
        rows = []
        for i in range(min(cfg.run.n_paths, SUMMARY_PATHS)):
            p = simulate_path(c, x0, cfg.grid.t0, cfg.grid.T, cfg.run.path_dt, SeedSpec(cfg.run.seed, i))
            qv = pathwise_qv(p)
            rows.append({"path_index": i, "terminal": p.terminal_state(), "jumps": len(p.jump_times),
                         "total_qv": qv.total_qv, "density_est": qv.continuous_density_est})
        return pd.DataFrame(rows)

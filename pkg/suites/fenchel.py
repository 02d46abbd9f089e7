"""Suite: conjugate duality and Hamiltonian oracles."""

from typing import Any

import numpy as np

from levy2b.controls import (HamiltonianInput, LevyMeasure, fenchel_F, g_heat_hamiltonian, hamiltonian_hat,
                             lipschitz_audit, validate_control_grid)
from levy2b.spec_lang import Const, evaluate

from .base import Suite

JUMP_ATOM = (1.0, 1.0)


def nested_grids(lo: float, hi: float, coarse_step: float, levels: int) -> list[np.ndarray]:
    """Grids where each level adds the midpoints of the previous one."""
    grids = [np.arange(lo, hi + coarse_step / 2, coarse_step)]
    for _ in range(levels - 1):
        prev = grids[-1]
        grids.append(np.sort(np.concatenate([prev, 0.5 * (prev[:-1] + prev[1:])])))
    return grids


class FenchelSuite(Suite):
    """Grid conjugate of H against closed forms, refinement monotonicity and Hamiltonian oracles."""

    name = "fenchel"
    description = "Fenchel conjugate and Hamiltonian checks"

    def run(self) -> dict[str, Any]:
        cfg = self.config
        fen = cfg.fenchel
        gammas = np.arange(fen.gamma_min, fen.gamma_max + fen.gamma_step / 2, fen.gamma_step)

        h = lambda gm, vbar: evaluate(fen.h, 0.0, gm)
        value = fenchel_F(h, gammas, [{}], fen.a, LevyMeasure())
        self.outputs["conjugate"] = value
        if fen.oracle is not None:
            self.check("quadratic_conjugate", abs(value - fen.oracle) <= fen.gamma_step,
                       value=value, oracle=fen.oracle)

        # H(gamma, vbar) = gamma^2 / 4 + vbar(1)^2 / 2 against one atom: F = a^2/4 + lambda^2/2
        e, lam = JUMP_ATOM
        vbars = [{e: v} for v in np.arange(-3.0, 3.0 + 5e-3, 1e-2)]
        jump_h = lambda gm, vbar: 0.25 * gm * gm + 0.5 * vbar[e] ** 2
        coarse = np.arange(fen.gamma_min, fen.gamma_max + 5e-3, 1e-2)
        jump_value = fenchel_F(jump_h, coarse, vbars, fen.a, LevyMeasure((JUMP_ATOM,)))
        jump_oracle = fen.a ** 2 / 4 + lam ** 2 / 2
        self.check("jump_conjugate", abs(jump_value - jump_oracle) <= 1e-3, value=jump_value, oracle=jump_oracle)

        self._refinement(fen)
        self._hamiltonian_oracles()
        return self.result()

    def _refinement(self, fen) -> None:
        rng = np.random.default_rng(self.config.run.seed)
        grids = nested_grids(fen.gamma_min, fen.gamma_max, 0.1, 5)
        instances = []
        for _ in range(fen.random_instances):
            alpha, beta, c0 = rng.uniform(0.2, 2.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)
            h = lambda gm, vbar, alpha=alpha, beta=beta, c0=c0: alpha * (gm - beta) ** 2 + c0
            values = [fenchel_F(h, grid, [{}], fen.a, LevyMeasure()) for grid in grids]
            exact = 0.5 * fen.a * beta + fen.a ** 2 / (16 * alpha) - c0
            instances.append({
                "values": values,
                "exact": exact,
                "monotone": all(v0 <= v1 for v0, v1 in zip(values, values[1:])),
                "below_exact": values[-1] <= exact + 1e-12,
            })
        self.outputs["refinement"] = instances
        self.check("refinement_monotone", all(i["monotone"] and i["below_exact"] for i in instances))

    def _hamiltonian_oracles(self) -> None:
        cfg = self.config
        controls, g = cfg.controls, cfg.generator
        self.outputs["control_grid"] = validate_control_grid(controls, cfg.control_bounds)
        audit = lipschitz_audit(g, controls, seed=cfg.run.seed)
        self.outputs["lipschitz_audit"] = audit
        self.check("lipschitz", audit["passed"])

        jump_free = all(len(c.nu) == 0 for c in controls)
        if not jump_free or g.lipschitz != 0 or g.h0 != Const(0.0):
            return
        a_lo = min(c.a for c in controls)
        a_hi = max(c.a for c in controls)
        worst = 0.0
        for d2 in np.linspace(-3.0, 3.0, 25):
            inp = HamiltonianInput(0.0, 0.0, 0.0, 0.0, {}, float(d2), lambda off: 0.0)
            value, _ = hamiltonian_hat(g, controls, inp)
            worst = max(worst, abs(value - g_heat_hamiltonian(a_lo, a_hi, float(d2))))
        self.check("g_heat_hamiltonian", worst <= 1e-12, worst=worst)

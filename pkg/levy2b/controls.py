"""Uncertainty set of (volatility, Levy measure) pairs, the generator, and the Fenchel-type transforms."""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .errors import SpecError
from .spec_lang import Const, Expr, evaluate, sample, to_source

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LevyMeasure:
    """Finite-atom Levy measure: a tuple of (mark, intensity) pairs."""

    atoms: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        atoms = tuple((float(e), float(lam)) for e, lam in self.atoms)
        marks = [e for e, _ in atoms]
        for e, lam in atoms:
            if not math.isfinite(e) or e == 0.0:
                raise SpecError(f"jump mark must be finite and nonzero, got {e}")
            if not math.isfinite(lam) or lam <= 0.0:
                raise SpecError(f"jump intensity must be finite and positive, got {lam} at mark {e}")
        if len(set(marks)) != len(marks):
            raise SpecError(f"jump marks must be pairwise distinct, got {marks}")
        object.__setattr__(self, "atoms", atoms)
        if not math.isfinite(self.second_moment) or not math.isfinite(self.large_jump_first_moment):
            raise SpecError("Levy measure moments must be finite")

    @property
    def marks(self) -> np.ndarray:
        return np.array([e for e, _ in self.atoms], dtype=float)

    @property
    def intensities(self) -> np.ndarray:
        return np.array([lam for _, lam in self.atoms], dtype=float)

    @property
    def total_intensity(self) -> float:
        return float(sum(lam for _, lam in self.atoms))

    @property
    def second_moment(self) -> float:
        return float(sum(lam * e * e for e, lam in self.atoms))

    @property
    def large_jump_first_moment(self) -> float:
        return float(sum(lam * abs(e) for e, lam in self.atoms if abs(e) >= 1.0))

    @property
    def moment_condition(self) -> float:
        """Integral of |e|^2 on small jumps plus |e| on large jumps."""
        return float(sum(lam * (e * e if abs(e) < 1.0 else abs(e)) for e, lam in self.atoms))

    @property
    def mean_jump(self) -> float:
        """Sum of lambda_k * e_k; the compensating drift is its negative."""
        return float(sum(lam * e for e, lam in self.atoms))

    def __len__(self) -> int:
        return len(self.atoms)


@dataclass(frozen=True)
class ControlPoint:
    a: float
    nu: LevyMeasure = field(default_factory=LevyMeasure)

    def __post_init__(self):
        if not math.isfinite(self.a) or self.a <= 0.0:
            raise SpecError(f"volatility level a must be finite and positive, got {self.a}")
        object.__setattr__(self, "a", float(self.a))

    def describe(self) -> str:
        jumps = ", ".join(f"({e:g}, {lam:g})" for e, lam in self.nu.atoms)
        return f"a={self.a:g}, nu={{{jumps}}}"


@dataclass(frozen=True)
class ControlGrid:
    points: tuple[ControlPoint, ...]

    def __post_init__(self):
        points = tuple(self.points)
        if not points:
            raise SpecError("control grid must contain at least one control")
        object.__setattr__(self, "points", points)

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def __getitem__(self, index: int) -> ControlPoint:
        return self.points[index]

    @property
    def moment_bound(self) -> float:
        return max(c.a + c.nu.second_moment + c.nu.large_jump_first_moment for c in self.points)

    @property
    def a_max(self) -> float:
        return max(c.a for c in self.points)

    @property
    def max_abs_mark(self) -> float:
        return max((abs(e) for c in self.points for e, _ in c.nu.atoms), default=0.0)

    def extended(self, point: ControlPoint) -> "ControlGrid":
        return ControlGrid(self.points + (point,))


@dataclass(frozen=True)
class JumpSlope:
    """gamma(e) = c * (1 ^ |e|), with c >= -1 + delta."""

    c: float = 0.0
    delta: float = 0.5

    def __post_init__(self):
        if not self.delta > 0.0:
            raise SpecError(f"jump slope delta must be positive, got {self.delta}")
        if self.c < -1.0 + self.delta:
            raise SpecError(f"jump slope c must exceed -1+delta = {-1.0 + self.delta:g}, got {self.c:g}")

    def __call__(self, e):
        return self.c * np.minimum(1.0, np.abs(e))

    @property
    def bounds(self) -> tuple[float, float]:
        """(c1, c2) with c1 (1^|e|) <= gamma(e) <= c2 (1^|e|)."""
        return min(self.c, 0.0), max(self.c, 0.0)


@dataclass(frozen=True)
class GeneratorSpec:
    """f = kappa_y y + kappa_z sqrt(a) z + sum_k u(e_k) gamma(e_k) lambda_k + h0(t, x)."""

    kappa_y: float = 0.0
    kappa_z: float = 0.0
    slope: JumpSlope = field(default_factory=JumpSlope)
    h0: Expr = Const(0.0)

    @property
    def lipschitz(self) -> float:
        return max(abs(self.kappa_y), abs(self.kappa_z))

    def describe(self) -> str:
        return (f"kappa_y={self.kappa_y:g}, kappa_z={self.kappa_z:g}, "
                f"c={self.slope.c:g}, h0={to_source(self.h0)}")


@dataclass(frozen=True)
class HamiltonianInput:
    t: float
    x: float
    y: float
    z: float
    u_values: Mapping[float, float]
    d2: float
    v_shift: Callable[[float], float]


# ---------------------------------------------------------------------------
# Generator
# ---------------------------------------------------------------------------

def eval_generator(g: GeneratorSpec, t: float, x: float, y: float, z: float,
                   u_values: Mapping[float, float], c: ControlPoint) -> float:
    jump_term = 0.0
    for e, lam in c.nu.atoms:
        if e not in u_values:
            raise SpecError(f"missing jump value u({e:g}) for control {c.describe()}")
        jump_term += u_values[e] * float(g.slope(e)) * lam
    return (g.kappa_y * y + g.kappa_z * math.sqrt(c.a) * z + jump_term
            + evaluate(g.h0, t, x))


def generator_field(g: GeneratorSpec, c: ControlPoint, y: np.ndarray, z: np.ndarray,
                    u_matrix: np.ndarray, h0_values: np.ndarray) -> np.ndarray:
    """Vectorized eval_generator; u_matrix has one row per atom of c.nu."""
    out = g.kappa_y * y + g.kappa_z * math.sqrt(c.a) * z + h0_values
    if len(c.nu):
        weights = g.slope(c.nu.marks) * c.nu.intensities
        out = out + weights @ u_matrix
    return out


def h0_slice(g: GeneratorSpec, t: float, xs: np.ndarray) -> np.ndarray:
    return sample(g.h0, t, xs)


# ---------------------------------------------------------------------------
# Nonlocal operator and the Hamiltonian
# ---------------------------------------------------------------------------

def nonlocal_A(v: Callable[[float], float], x: float, e: float, dv: float) -> float:
    """(Av)(x, e) = v(x + e) - v(x) - e * dv."""
    return v(x + e) - v(x) - e * dv


def _scalar_summand(g: GeneratorSpec, c: ControlPoint, inp: HamiltonianInput, generator_sign: float) -> float:
    # v_shift is indexed by offset from inp.x, so A is taken at offset 0
    nonlocal_term = sum(lam * nonlocal_A(inp.v_shift, 0.0, e, inp.z) for e, lam in c.nu.atoms)
    f = eval_generator(g, inp.t, inp.x, inp.y, inp.z, inp.u_values, c)
    return 0.5 * c.a * inp.d2 + nonlocal_term + generator_sign * f


def hamiltonian_hat(g: GeneratorSpec, grid: ControlGrid, inp: HamiltonianInput,
                    generator_sign: float = -1.0) -> tuple[float, int]:
    """Sup over the grid of 1/2 a d2 + int Av dnu - f; ties go to the lowest index.

    generator_sign=+1 evaluates the same supremum with f replaced by -f, the
    convention of the Markovian PIDE whose probabilistic driver enters with +dt.
    """
    if len(grid.points) == 0:
        raise SpecError("empty control grid")
    best_value = -math.inf
    best_index = -1
    for index, c in enumerate(grid.points):
        value = _scalar_summand(g, c, inp, generator_sign)
        if value > best_value:
            best_value, best_index = value, index
    return best_value, best_index


def summand(g: GeneratorSpec, c: ControlPoint, *, y: np.ndarray, z: np.ndarray,
            d2: np.ndarray, v_here: np.ndarray, jump_values: np.ndarray,
            u_matrix: np.ndarray, h0_values: np.ndarray,
            generator_sign: float = -1.0,
            local_mask: np.ndarray | None = None) -> np.ndarray:
    """Per-node summand of hamiltonian_hat for one control, vectorized over nodes.

    jump_values[k] holds v(x + e_k); u_matrix[k] is the jump argument handed to f.
    local_mask zeroes the diffusion and nonlocal part (absorbing nodes).
    """
    local = 0.5 * c.a * d2
    if len(c.nu):
        marks = c.nu.marks[:, None]
        a_values = jump_values - v_here - marks * z
        local = local + c.nu.intensities @ a_values
    if local_mask is not None:
        local = np.where(local_mask, local, 0.0)
    return local + generator_sign * generator_field(g, c, y, z, u_matrix, h0_values)


def g_heat_hamiltonian(a_lo: float, a_hi: float, d2: float) -> float:
    """Closed form 1/2 (a_hi d2^+ - a_lo d2^-) of the jump-free, driver-free sup."""
    return 0.5 * (a_hi * max(d2, 0.0) - a_lo * max(-d2, 0.0))


# ---------------------------------------------------------------------------
# Conjugate of H
# ---------------------------------------------------------------------------

def fenchel_F(h: Callable[[float, Mapping[float, float]], float], d1_grid: Sequence[float],
              d2_grid: Sequence[Mapping[float, float]], a: float, nu: LevyMeasure) -> float:
    """Grid sup of 1/2 a gamma + sum_k vbar(e_k) lambda_k - h(gamma, vbar).

    d2_grid holds vbar assignments (mark -> value); marks of nu missing from an
    assignment count as zero. h may return +inf off its domain.
    """
    if len(d1_grid) == 0 or len(d2_grid) == 0:
        raise SpecError("fenchel_F needs non-empty gamma and vbar grids")
    best = -math.inf
    gammas = np.asarray(d1_grid, dtype=float)
    for vbar in d2_grid:
        jump_part = sum(vbar.get(e, 0.0) * lam for e, lam in nu.atoms)
        values = np.array([0.5 * a * gm + jump_part - h(float(gm), vbar) for gm in gammas])
        with np.errstate(invalid="ignore"):
            candidate = np.max(values)
        if candidate > best:
            best = float(candidate)
    return best


# ---------------------------------------------------------------------------
# Audits
# ---------------------------------------------------------------------------

def validate_control_grid(grid: ControlGrid, bounds: tuple[float, float, float]) -> dict[str, Any]:
    a_min, a_max, moment_cap = bounds
    per_control = []
    for index, c in enumerate(grid.points):
        violations = []
        if c.a < a_min:
            violations.append(f"a below a_min: {c.a:g} < {a_min:g}")
        if c.a > a_max:
            violations.append(f"a above a_max: {c.a:g} > {a_max:g}")
        if c.nu.second_moment > moment_cap:
            violations.append(f"second_moment {c.nu.second_moment:g} > {moment_cap:g}")
        if c.nu.large_jump_first_moment > moment_cap:
            violations.append(f"large_jump_first_moment {c.nu.large_jump_first_moment:g} > {moment_cap:g}")
        if c.nu.moment_condition > moment_cap:
            violations.append(f"moment condition {c.nu.moment_condition:g} > {moment_cap:g}")
        per_control.append({
            "index": index,
            "control": c.describe(),
            "passed": not violations,
            "violations": violations,
        })
    return {
        "passed": all(item["passed"] for item in per_control),
        "controls": per_control,
        "uniform_moment": grid.moment_bound,
    }


def lipschitz_audit(g: GeneratorSpec, grid: ControlGrid, n_samples: int = 200,
                    seed: int = 0) -> dict[str, Any]:
    """Random-sample witness of the y/z Lipschitz bound and the u-monotonicity bounds."""
    rng = np.random.default_rng(seed)
    L = g.lipschitz
    c1, c2 = g.slope.bounds
    worst_lipschitz = -math.inf
    worst_jump = -math.inf
    for c in grid.points:
        marks = c.nu.marks
        for _ in range(n_samples):
            t, x = rng.uniform(0.0, 1.0), rng.normal()
            y1, y2, z1, z2 = rng.normal(size=4)
            u1 = dict(zip(marks, rng.normal(size=len(marks))))
            u2 = dict(zip(marks, rng.normal(size=len(marks))))
            f11 = eval_generator(g, t, x, y1, z1, u1, c)
            f22 = eval_generator(g, t, x, y2, z2, u1, c)
            bound = L * (abs(y1 - y2) + math.sqrt(c.a) * abs(z1 - z2))
            worst_lipschitz = max(worst_lipschitz, abs(f11 - f22) - bound)
            diff = eval_generator(g, t, x, y1, z1, u1, c) - eval_generator(g, t, x, y1, z1, u2, c)
            upper = sum((u1[e] - u2[e]) * float(g.slope(e)) * lam for e, lam in c.nu.atoms)
            worst_jump = max(worst_jump, abs(diff - upper))
    return {
        "lipschitz_constant": L,
        "slope_bounds": [c1, c2],
        "worst_lipschitz_excess": worst_lipschitz,
        "worst_jump_bound_gap": worst_jump,
        "passed": worst_lipschitz <= 1e-12 and worst_jump <= 1e-12 and c1 > -1.0,
    }

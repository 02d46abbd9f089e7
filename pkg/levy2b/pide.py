"""Analytic route: explicit monotone scheme for the fully nonlinear PIDE, the viscosity audit and field comparison."""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from sklearn.linear_model import LinearRegression

from .bsdej import SpaceTimeGrid, ValueField, check_cfl, solve_bsdej, terminal_slice
from .config import worker_count
from .controls import ControlGrid, GeneratorSpec, h0_slice, summand
from .errors import GridMismatchError
from .spec_lang import Expr, sample
from .value2 import solve_dynamic

logger = logging.getLogger(__name__)


@dataclass
class PIDESolution:
    u: ValueField
    argmax: np.ndarray  # (nt, nx)
    cfl_margin: float
    boundary_influence: float | None = None


@dataclass(frozen=True)
class TestFunctionFamily:
    """phi(t, x) = p (x - c)^2 + tau(t) + offset, with c over the audited nodes.

    tau has slope u_t + q * q_margin at t_n, u_t being the centred difference at
    the touch node, and a curvature of time_margin * dt beyond the node's own
    second difference, so a spatial extremum stays strict across the three slices.
    """

    __test__ = False  # not a pytest class

    p_values: tuple[float, ...] = (-2.0, -0.5, 0.5, 2.0)
    q_values: tuple[float, ...] = (-1.0, 1.0)
    x_window: int | None = 2  # half-width in nodes; None uses the whole slice
    q_margin: float = 1e-3
    time_margin: float = 1.0

    def members(self):
        return [(p, q) for p in self.p_values for q in self.q_values]


@dataclass
class FieldDiff:
    sup_diff: float
    l2_diff: float
    location: tuple[float, float] | None


@dataclass
class _Stencil:
    """Slice-level quantities shared by all controls in one step."""

    nxt: np.ndarray
    z: np.ndarray
    d2: np.ndarray
    h0: np.ndarray
    interior: np.ndarray
    jumps: dict[float, np.ndarray] = field(default_factory=dict)

    def reads(self, marks: np.ndarray) -> np.ndarray:
        if len(marks) == 0:
            return np.zeros((0, self.nxt.size))
        return np.stack([self.jumps[float(e)] for e in marks])

    def summand(self, g_spec: GeneratorSpec, c, y: np.ndarray) -> np.ndarray:
        """Per-node summand of hamiltonian_hat with +F; boundary nodes keep only the driver."""
        jump_values = self.reads(c.nu.marks)
        return summand(g_spec, c, y=y, z=self.z, d2=self.d2, v_here=self.nxt, jump_values=jump_values,
                       u_matrix=jump_values - self.nxt, h0_values=self.h0, generator_sign=1.0,
                       local_mask=self.interior)


def _stencil(grid: SpaceTimeGrid, grid_ctrl: ControlGrid, g_spec: GeneratorSpec,
             nxt: np.ndarray, t: float) -> _Stencil:
    d2 = np.zeros_like(nxt)
    d2[1:-1] = (nxt[2:] - 2.0 * nxt[1:-1] + nxt[:-2]) / (grid.dx * grid.dx)
    interior = np.zeros(grid.nx, dtype=bool)
    interior[1:-1] = True
    st = _Stencil(nxt, np.gradient(nxt, grid.dx), d2, h0_slice(g_spec, t, grid.nodes), interior)
    xs = grid.nodes
    for c in grid_ctrl:
        for e in c.nu.marks:
            if float(e) not in st.jumps:
                st.jumps[float(e)] = grid.interp(nxt, xs + e)
    return st


def solve_pide(grid_ctrl: ControlGrid, g_spec: GeneratorSpec, terminal: Expr | np.ndarray,
               grid: SpaceTimeGrid, n_picard: int = 2) -> PIDESolution:
    """Backward stepping u^n = u^{n+1} + dt * hamiltonian_hat, with the driver entering as +F.

    Boundary nodes are absorbing: only the driver moves them. The first Picard
    pass evaluates the driver at u^{n+1}, later passes at the previous candidate.
    """
    margin = min(check_cfl(c, grid, index) for index, c in enumerate(grid_ctrl))
    logger.debug("solve_pide: nx=%d nt=%d dt=%.3g cfl margin %.3f", grid.nx, grid.nt, grid.dt, margin)
    data = np.empty((grid.nt + 1, grid.nx))
    argmax = np.empty((grid.nt, grid.nx), dtype=int)
    data[-1] = terminal_slice(terminal, grid)
    nodes = np.arange(grid.nx)
    for n in range(grid.nt - 1, -1, -1):
        st = _stencil(grid, grid_ctrl, g_spec, data[n + 1], grid.time_of(n))
        y_arg = st.nxt
        for _ in range(max(1, n_picard)):
            candidates = np.stack([st.nxt + grid.dt * st.summand(g_spec, c, y_arg) for c in grid_ctrl])
            best = np.argmax(candidates, axis=0)
            y_arg = candidates[best, nodes]
        argmax[n] = best
        data[n] = y_arg
    return PIDESolution(ValueField(grid, data), argmax, margin)


def compare_fields(u1: ValueField, u2: ValueField, region: tuple[float, float]) -> FieldDiff:
    if not u1.grid.shares(u2.grid):
        raise GridMismatchError(f"cannot compare fields on different grids: {u1.grid} vs {u2.grid}")
    grid = u1.grid
    mask = grid.region_mask(region)
    diff = np.abs(u1.data[:, mask] - u2.data[:, mask])
    sup = float(diff.max()) if diff.size else 0.0
    l2 = float(math.sqrt(np.sum(diff ** 2) * grid.dx * grid.dt))
    if sup == 0.0:
        return FieldDiff(0.0, l2, None)
    n, j = np.unravel_index(int(np.argmax(diff)), diff.shape)
    return FieldDiff(sup, l2, (float(grid.times[n]), float(grid.nodes[mask][j])))


# ---------------------------------------------------------------------------
# Viscosity audit
# ---------------------------------------------------------------------------

def default_tolerance(grid: SpaceTimeGrid, scheme_constant: float = 5.0) -> float:
    return 1e-3 + scheme_constant * (grid.dt + grid.dx)


def _touch_residuals(grid_ctrl: ControlGrid, g_spec: GeneratorSpec, t: float, xs: np.ndarray,
                     centres: np.ndarray, y: np.ndarray, p: float, phi_t: np.ndarray) -> np.ndarray:
    """r = -phi_t - hamiltonian_hat for p (x - c)^2 touching u at (t, x).

    Dphi = 2p (x - c), D2phi = 2p and phi(x + e) - phi(x) = p ((x - c + e)^2 - (x - c)^2).
    """
    h0 = h0_slice(g_spec, t, xs)
    offset = xs - centres
    z = 2.0 * p * offset
    d2 = np.full_like(xs, 2.0 * p)
    best = np.full_like(xs, -np.inf)
    for c in grid_ctrl:
        rise = p * ((offset + c.nu.marks[:, None]) ** 2 - offset ** 2)
        value = summand(g_spec, c, y=y, z=z, d2=d2, v_here=y, jump_values=y + rise, u_matrix=rise,
                        h0_values=h0, generator_sign=1.0)
        best = np.maximum(best, value)
    return -phi_t - best


def _time_part(data: np.ndarray, n: int, nodes: np.ndarray, dt: float, shift: float, time_margin: float,
               side: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Slope of tau at each touch node and tau(t_{n-1}), tau(t_{n+1})."""
    before, here, after = data[n - 1, nodes], data[n, nodes], data[n + 1, nodes]
    slope = (after - before) / (2.0 * dt) + shift
    half_second = 0.5 * (after - 2.0 * here + before)
    pad = (time_margin + abs(shift)) * dt
    if side == "sub":
        curve = np.maximum(half_second, 0.0) + pad
    else:
        curve = np.minimum(half_second, 0.0) - pad
    return slope, curve - slope * dt, curve + slope * dt


def _window_touches(slices: np.ndarray, cols: np.ndarray, bowl: np.ndarray, tau_lo: np.ndarray,
                    tau_hi: np.ndarray, sign: float) -> np.ndarray:
    """(n_c, n_nodes) flags: sign * (u - phi) has a strict max at the window centre."""
    w = cols.shape[1] // 2
    lifted = np.stack([slices[0][cols] - tau_lo[:, None], slices[1][cols], slices[2][cols] - tau_hi[:, None]])
    psi = sign * (lifted[:, None] - bowl[None])
    centre = psi[1, :, :, w].copy()
    psi[1, :, :, w] = -np.inf
    return centre > psi.max(axis=(0, 3))


def _slice_touches(slices: np.ndarray, lookup: np.ndarray, bowl: np.ndarray, tau_lo: np.ndarray,
                   tau_hi: np.ndarray, sign: float) -> np.ndarray:
    """(n_c, n_nodes) flags: sign * (u - phi) has a unique max over the slice at an audited node."""
    psi = sign * (slices[:, None, :] - bowl[None])
    rows = np.arange(bowl.shape[0])
    best = np.argmax(psi[1], axis=1)
    top = psi[1, rows, best]
    rest = psi[1].copy()
    rest[rows, best] = -np.inf
    pos = lookup[best]
    ok = (pos >= 0) & (top > rest.max(axis=1))
    pos_safe = np.where(ok, pos, 0)
    ok &= top > psi[0].max(axis=1) - sign * tau_lo[pos_safe]
    ok &= top > psi[2].max(axis=1) - sign * tau_hi[pos_safe]
    touched = np.zeros((bowl.shape[0], len(tau_lo)), dtype=bool)
    touched[rows[ok], pos[ok]] = True
    return touched


def viscosity_audit(u: ValueField, fam: TestFunctionFamily, grid_ctrl: ControlGrid,
                    g_spec: GeneratorSpec, tol: float | None = None,
                    region: tuple[float, float] | None = None, max_records: int = 50) -> dict[str, Any]:
    """Sub/super-solution residuals wherever a family member touches u strictly.

    passed needs at least one touch and no residual outside the tolerance.
    """
    grid = u.grid
    tol = default_tolerance(grid) if tol is None else tol
    xs = grid.nodes
    w = fam.x_window
    if w is not None:
        w = max(1, min(w, (grid.nx - 3) // 2))
        nodes = np.arange(w, grid.nx - w)
    else:
        nodes = np.arange(1, grid.nx - 1)
    if region is not None:
        nodes = nodes[grid.region_mask(region)[nodes]]
    cs = xs[nodes]
    lookup = np.full(grid.nx, -1)
    lookup[nodes] = np.arange(len(nodes))
    cols = nodes[:, None] + np.arange(-w, w + 1) if w is not None else None

    def audit_member(pq: tuple[float, float]) -> tuple[list[dict[str, Any]], dict[str, int]]:
        p, q = pq
        shift = q * fam.q_margin
        if w is None:
            bowl = p * (xs[None, :] - cs[:, None]) ** 2
        else:
            bowl = p * (xs[cols][None, :, :] - cs[:, None, None]) ** 2
        found = []
        touches = {"sub": 0, "super": 0}
        for n in range(1, grid.nt):
            t_n = grid.time_of(n)
            slices = u.data[n - 1:n + 2]
            for side, sign in (("sub", 1.0), ("super", -1.0)):
                slope, tau_lo, tau_hi = _time_part(u.data, n, nodes, grid.dt, shift, fam.time_margin, side)
                if w is None:
                    touched = _slice_touches(slices, lookup, bowl, tau_lo, tau_hi, sign)
                else:
                    touched = _window_touches(slices, cols, bowl, tau_lo, tau_hi, sign)
                ci, ii = np.nonzero(touched)
                if len(ii) == 0:
                    continue
                touches[side] += len(ii)
                at = nodes[ii]
                r = _touch_residuals(grid_ctrl, g_spec, t_n, xs[at], cs[ci], u.data[n, at], p, slope[ii])
                bad = r > tol if side == "sub" else r < -tol
                for k in np.flatnonzero(bad):
                    found.append({"side": side, "t": float(t_n), "x": float(xs[at[k]]), "node": int(at[k]),
                                  "step": n, "p": p, "q": q, "centre": float(cs[ci[k]]),
                                  "phi_t": float(slope[ii[k]]), "residual": float(r[k])})
        return found, touches

    with ThreadPoolExecutor(max_workers=worker_count()) as executor:
        results = list(executor.map(audit_member, fam.members()))
    violations = [v for chunk, _ in results for v in chunk]
    sub_touches = sum(t["sub"] for _, t in results)
    super_touches = sum(t["super"] for _, t in results)
    super_v = [v for v in violations if v["side"] == "super"]
    sub_v = [v for v in violations if v["side"] == "sub"]
    if sub_touches + super_touches == 0:
        logger.warning("viscosity_audit: no test function touched u on %d nodes", len(nodes))
    return {
        "tolerance": tol,
        "touch_points": sub_touches + super_touches,
        "sub_touches": sub_touches,
        "super_touches": super_touches,
        "super_violations": len(super_v),
        "sub_violations": len(sub_v),
        "worst_super_residual": min((v["residual"] for v in super_v), default=0.0),
        "worst_sub_residual": max((v["residual"] for v in sub_v), default=0.0),
        "records": violations[:max_records],
        "passed": not violations and sub_touches + super_touches > 0,
    }


# ---------------------------------------------------------------------------
# K rate and convergence
# ---------------------------------------------------------------------------

def k_rate_field(u: ValueField, grid_ctrl: ControlGrid, g_spec: GeneratorSpec) -> np.ndarray:
    """(n_controls, nt, nx) of max_c summand_c - summand_c on the stencils of each step."""
    grid = u.grid
    rates = np.empty((len(grid_ctrl), grid.nt, grid.nx))
    for n in range(grid.nt):
        st = _stencil(grid, grid_ctrl, g_spec, u.data[n + 1], grid.time_of(n))
        terms = np.stack([st.summand(g_spec, c, u.data[n]) for c in grid_ctrl])
        rates[:, n] = terms.max(axis=0) - terms
    return rates


def observed_order(spacings: Sequence[float], errors: Sequence[float]) -> float | None:
    """Least-squares slope of log error against log dx; None if fewer than two usable levels."""
    pairs = [(h, e) for h, e in zip(spacings, errors) if e > 0]
    if len(pairs) < 2:
        return None
    X = np.log([[h] for h, _ in pairs])
    y = np.log([e for _, e in pairs])
    return float(LinearRegression().fit(X, y).coef_[0])


def convergence_study(grid_ctrl: ControlGrid, g_spec: GeneratorSpec, terminal: Expr,
                      base_grid: SpaceTimeGrid, levels: int, oracle: Expr,
                      region: tuple[float, float], grid_factory: Callable[[SpaceTimeGrid], SpaceTimeGrid],
                      n_picard: int = 2, min_ratio: float = 1.5, exact_floor: float = 1e-8,
                      widen: float | None = None) -> dict[str, Any]:
    """Sup-error at t0 against the oracle u(t0, x) on successively halved dx, for both routes.

    grid_factory maps a grid to its refinement (dx halved, dt per CFL). Level k is
    solved on the refined grid widened by k * widen on each side, so the absorbing
    boundary recedes as dx shrinks; widen defaults to a quarter of the base width.
    """
    if widen is None:
        widen = 0.25 * (base_grid.x_max - base_grid.x_min)
    refined = [base_grid]
    for _ in range(levels - 1):
        refined.append(grid_factory(refined[-1]))
    grids = [gr if k == 0 or widen <= 0 else gr.widened(k * widen)[0] for k, gr in enumerate(refined)]
    routes = {
        "pide": lambda gr: solve_pide(grid_ctrl, g_spec, terminal, gr, n_picard).u.initial,
        "dynamic": lambda gr: solve_dynamic(grid_ctrl, g_spec, terminal, gr, n_picard).u.initial,
    }
    report: dict[str, Any] = {"dx": [gr.dx for gr in grids], "nt": [gr.nt for gr in grids],
                              "domain": [[gr.x_min, gr.x_max] for gr in grids]}
    passed = True
    for name, route in routes.items():
        errors = []
        for gr in grids:
            mask = gr.region_mask(region)
            exact = sample(oracle, gr.t0, gr.nodes[mask])
            errors.append(float(np.max(np.abs(route(gr)[mask] - exact))))
        ratios = [e0 / e1 if e1 > 0 else math.inf for e0, e1 in zip(errors, errors[1:])]
        ok = all(e0 <= exact_floor or r >= min_ratio for e0, r in zip(errors, ratios))
        passed = passed and ok
        logger.debug("convergence_study %s: errors %s", name, errors)
        report[name] = {"errors": errors, "ratios": ratios,
                        "observed_order": observed_order(report["dx"], errors), "passed": ok}
    report["passed"] = passed
    return report


def linear_identity_gap(grid_ctrl: ControlGrid, g_spec: GeneratorSpec, terminal: Expr,
                        grid: SpaceTimeGrid, n_picard: int = 2) -> float:
    """Sup difference between solve_pide and solve_bsdej for a singleton grid."""
    (c,) = grid_ctrl.points
    pide = solve_pide(grid_ctrl, g_spec, terminal, grid, n_picard).u.data
    prob = solve_bsdej(c, g_spec, terminal, grid, n_picard).y.data
    return float(np.max(np.abs(pide - prob)))

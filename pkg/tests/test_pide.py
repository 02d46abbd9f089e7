from pathlib import Path

import numpy as np
import pytest

from levy2b.bsdej import SpaceTimeGrid, ValueField, cfl_max_dt
from levy2b.config import load_config
from levy2b.controls import (ControlGrid, ControlPoint, GeneratorSpec, HamiltonianInput, JumpSlope, LevyMeasure,
                             hamiltonian_hat)
from levy2b.errors import GridMismatchError
from levy2b.pide import (TestFunctionFamily, compare_fields, convergence_study, default_tolerance,
                         k_rate_field, linear_identity_gap, observed_order, solve_pide, viscosity_audit)
from levy2b.spec_lang import parse
from levy2b.value2 import solve_dynamic
from suites.compare import refine_with_cfl

tolerance = 1e-12

configs = Path(__file__).resolve().parent.parent / "configs"

zero_driver = GeneratorSpec()
plain = ControlPoint(1.0)
double = ControlPoint(2.0)
with_jump = ControlPoint(1.0, LevyMeasure(((1.0, 0.5),)))
singleton = ControlGrid((with_jump,))
two_vols = ControlGrid((plain, double))
region = (-1.0, 1.0)


def small_grid(nt=100):
    return SpaceTimeGrid(-6.0, 6.0, 61, 1.0, nt)


def audit_grid():
    return SpaceTimeGrid(-4.0, 4.0, 81, 0.5, 60)


def check_audit_clean(report):
    assert report["passed"]
    assert report["touch_points"] > 0
    assert report["super_violations"] == 0
    assert report["sub_violations"] == 0
    assert report["records"] == []


def test_constant_terminal_is_preserved():
    sol = solve_pide(two_vols, zero_driver, parse("3"), small_grid())
    assert np.max(np.abs(sol.u.data - 3.0)) <= tolerance
    assert sol.cfl_margin >= 1.0


def test_identity_terminal():
    sol = solve_pide(singleton, zero_driver, parse("x"), small_grid())
    assert abs(sol.u.at(0, 0.0)) <= 5e-3


def test_singleton_second_moment():
    dx = 16.0 / 320
    grid = SpaceTimeGrid.auto(-8.0, 8.0, 321, 1.0, cfl_max_dt(with_jump, dx), 0.9)
    sol = solve_pide(singleton, zero_driver, parse("x^2"), grid)
    assert abs(sol.u.at(0, 0.0) - 1.5) <= 2e-2
    assert np.all(sol.argmax == 0)


def test_linear_identity_with_driver():
    driver = GeneratorSpec(kappa_y=0.3, kappa_z=0.2, slope=JumpSlope(0.4), h0=parse("cos(x)"))
    assert linear_identity_gap(singleton, driver, parse("sin(x)"), small_grid()) <= 1e-10


def test_cross_route_agreement():
    grid = small_grid()
    pide = solve_pide(two_vols, zero_driver, parse("x^2"), grid).u
    dynamic = solve_dynamic(two_vols, zero_driver, parse("x^2"), grid).u
    assert compare_fields(pide, dynamic, (-2.0, 2.0)).sup_diff <= 2e-2


def test_compare_fields():
    grid = small_grid(nt=10)
    base = ValueField(grid, np.zeros((grid.nt + 1, grid.nx)))
    diff = compare_fields(base, ValueField(grid, base.data.copy()), region)
    assert diff.sup_diff == 0.0
    assert diff.location is None

    diff = compare_fields(base, ValueField(grid, base.data + 1.0), region)
    assert diff.sup_diff == 1.0
    n_nodes = int(grid.region_mask(region).sum())
    assert diff.l2_diff == pytest.approx(np.sqrt((grid.nt + 1) * n_nodes * grid.dx * grid.dt))
    assert diff.location is not None

    other = SpaceTimeGrid(-6.0, 6.0, 31, 1.0, 10)
    with pytest.raises(GridMismatchError):
        compare_fields(base, ValueField(other, np.zeros((11, 31))), region)


def test_comparison_principle():
    grid = small_grid()
    driver = GeneratorSpec(kappa_y=0.4)
    lo = solve_pide(two_vols, driver, parse("abs(x) - 1"), grid).u.data
    hi = solve_pide(two_vols, driver, parse("abs(x) - 1 + 0.1 * cos(3 * x)^2"), grid).u.data
    assert np.all(lo <= hi + tolerance)


def test_one_step_matches_hamiltonian_hat():
    controls = ControlGrid((plain, ControlPoint(2.0, LevyMeasure(((0.3, 0.7), (-1.0, 0.4)))), with_jump))
    driver = GeneratorSpec(kappa_y=0.3, kappa_z=-0.2, slope=JumpSlope(0.4), h0=parse("cos(x)"))
    grid = SpaceTimeGrid(-3.0, 3.0, 31, 0.01, 1)
    sol = solve_pide(controls, driver, parse("sin(x) + 0.3 * x^2"), grid, n_picard=1)
    nxt = sol.u.data[1]
    z = np.gradient(nxt, grid.dx)
    marks = sorted({float(e) for c in controls for e in c.nu.marks})
    for i in range(10, 21):
        x = float(grid.nodes[i])
        v = lambda off: float(grid.interp(nxt, np.array([x + off]))[0])
        d2 = (nxt[i + 1] - 2.0 * nxt[i] + nxt[i - 1]) / grid.dx ** 2
        u_values = {e: v(e) - nxt[i] for e in marks}
        inp = HamiltonianInput(0.0, x, float(nxt[i]), float(z[i]), u_values, float(d2), v)
        value, index = hamiltonian_hat(driver, controls, inp, generator_sign=1.0)
        assert abs(sol.u.data[0, i] - (nxt[i] + grid.dt * value)) <= tolerance
        assert sol.argmax[0, i] == index


def test_viscosity_audit_passes_on_scheme_output():
    grid = audit_grid()
    sol = solve_pide(singleton, zero_driver, parse("x^2"), grid)
    report = viscosity_audit(sol.u, TestFunctionFamily(), singleton, zero_driver, region=region)
    check_audit_clean(report)
    assert report["sub_touches"] > 0
    assert report["super_touches"] > 0
    assert report["tolerance"] == default_tolerance(grid)


def test_viscosity_audit_constant_field():
    grid = small_grid(nt=20)
    u = ValueField(grid, np.full((grid.nt + 1, grid.nx), 2.0))
    check_audit_clean(viscosity_audit(u, TestFunctionFamily(), two_vols, zero_driver))
    check_audit_clean(viscosity_audit(u, TestFunctionFamily(x_window=None), two_vols, zero_driver,
                                      region=region))


def test_viscosity_audit_flags_stationary_concave_profile():
    # -x^2 frozen in time: -u_t - a/2 u_xx = 2 > 0 for a = 2
    grid = audit_grid()
    controls = ControlGrid((double,))
    frozen = np.tile(-grid.nodes ** 2, (grid.nt + 1, 1))
    for fam in (TestFunctionFamily(), TestFunctionFamily(x_window=None)):
        report = viscosity_audit(ValueField(grid, frozen), fam, controls, zero_driver, region=region)
        assert not report["passed"]
        assert report["touch_points"] > 0
        assert report["sub_violations"] > 0
        assert all(r["residual"] > report["tolerance"] for r in report["records"] if r["side"] == "sub")


def test_viscosity_audit_sees_the_gradient_term():
    grid = audit_grid()
    controls = ControlGrid((plain,))
    driver = GeneratorSpec(kappa_z=1.0)
    u = solve_pide(controls, driver, parse("x^2"), grid).u
    check_audit_clean(viscosity_audit(u, TestFunctionFamily(), controls, driver, region=region))

    flipped = viscosity_audit(u, TestFunctionFamily(), controls, GeneratorSpec(kappa_z=-1.0), region=region)
    assert not flipped["passed"]
    assert flipped["sub_violations"] > 0
    assert any(r["x"] != r["centre"] for r in flipped["records"])


def test_viscosity_audit_detects_corruption():
    grid = audit_grid()
    sol = solve_pide(singleton, zero_driver, parse("x^2"), grid)
    step, node = grid.nt // 2, grid.nx // 2
    corrupted = sol.u.data.copy()
    corrupted[step, node] += 0.5
    report = viscosity_audit(ValueField(grid, corrupted), TestFunctionFamily(), singleton, zero_driver,
                             region=region, max_records=grid.nt * grid.nx)
    assert not report["passed"]
    hits = [r for r in report["records"] if r["side"] == "sub" and r["node"] == node and r["step"] == step]
    assert hits
    assert all(r["residual"] > report["tolerance"] for r in hits)
    assert report["worst_sub_residual"] >= max(r["residual"] for r in hits)


def test_k_rate_minimum_is_zero():
    grid = small_grid()
    u = solve_pide(two_vols, zero_driver, parse("x^3 - x"), grid).u
    rates = k_rate_field(u, two_vols, zero_driver)
    assert rates.shape == (2, grid.nt, grid.nx)
    assert rates.min() >= 0.0
    assert np.all(rates.min(axis=0) == 0.0)


def test_observed_order():
    assert observed_order([0.2, 0.1, 0.05], [0.04, 0.01, 0.0025]) == pytest.approx(2.0)
    assert observed_order([0.2, 0.1], [0.04, 0.0]) is None
    assert observed_order([0.2], [0.04]) is None


def test_convergence_on_off_grid_mark():
    c = ControlPoint(1.0, LevyMeasure(((0.13, 0.5),)))
    report = convergence_study(ControlGrid((c,)), zero_driver, parse("x^2"), small_grid(nt=40), 2,
                               parse("x^2 + 1.00845"), region, lambda gr: gr.refined())
    assert report["dx"] == pytest.approx([0.2, 0.1])
    assert report["nt"] == [40, 160]
    for route in ("pide", "dynamic"):
        errors = report[route]["errors"]
        assert errors[1] < errors[0]
        assert report[route]["ratios"][0] >= 1.5
    assert report["passed"]


def test_convergence_on_reference_config():
    cfg = load_config(configs / "singleton.toml")
    run = cfg.run
    study = convergence_study(cfg.controls, cfg.generator, cfg.terminal, cfg.grid, run.convergence_levels,
                              run.closed_form, run.region, refine_with_cfl(cfg.controls, cfg.safety_factor),
                              run.n_picard)
    assert study["domain"][0] == [-8.0, 8.0]
    assert study["domain"][1] == pytest.approx([-12.0, 12.0])
    for route in ("pide", "dynamic"):
        errors = study[route]["errors"]
        assert errors[1] < errors[0]
    assert study["passed"]

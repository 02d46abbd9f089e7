import numpy as np
import pytest

from levy2b.bsdej import SpaceTimeGrid, cfl_max_dt, solve_bsdej
from levy2b.controls import ControlGrid, ControlPoint, GeneratorSpec, JumpSlope, LevyMeasure
from levy2b.errors import CFLError, ConfigError
from levy2b.spec_lang import parse
from levy2b.value2 import (dpp_check, k_increments, minimality_report, nonconvex_gap, solve_dynamic,
                           solve_static)

tolerance = 1e-12

zero_driver = GeneratorSpec()
plain = ControlPoint(1.0)
double = ControlPoint(2.0)
with_jump = ControlPoint(1.0, LevyMeasure(((1.0, 0.5),)))
two_vols = ControlGrid((plain, double))
region = (-2.0, 2.0)


def reference_grid(controls, nx=321):
    dx = 16.0 / (nx - 1)
    return SpaceTimeGrid.auto(-8.0, 8.0, nx, 1.0, min(cfl_max_dt(c, dx) for c in controls), 0.9, nt_multiple=10)


def small_grid():
    # dx = 0.2, dt = 0.01 fits a = 2
    return SpaceTimeGrid(-6.0, 6.0, 61, 1.0, 100)


def test_singleton_dynamic_is_bsdej():
    grid = small_grid()
    driver = GeneratorSpec(kappa_y=0.3, kappa_z=0.2, slope=JumpSlope(0.4), h0=parse("cos(x)"))
    dynamic = solve_dynamic(ControlGrid((with_jump,)), driver, parse("abs(x)"), grid)
    single = solve_bsdej(with_jump, driver, parse("abs(x)"), grid)
    assert np.array_equal(dynamic.u.data, single.y.data)
    assert np.all(dynamic.argmax == 0)


def test_convex_two_volatility_case():
    grid = reference_grid(two_vols)
    dynamic = solve_dynamic(two_vols, zero_driver, parse("x^2"), grid)
    assert abs(dynamic.u.at(0, 0.0) - 2.0) <= 2e-2
    mask = grid.region_mask(region)
    assert np.all(dynamic.argmax[:, mask] == 1)

    static = solve_static(two_vols, zero_driver, parse("x^2"), grid)
    assert np.max(np.abs(static.u0[mask] - dynamic.u.initial[mask])) <= 1e-2


def test_jump_control_wins_on_convex_terminal():
    grid = reference_grid([with_jump])
    controls = ControlGrid((plain, with_jump))
    dynamic = solve_dynamic(controls, zero_driver, parse("x^2"), grid)
    assert abs(dynamic.u.at(0, 0.0) - 1.5) <= 2e-2
    assert np.all(dynamic.argmax[:, grid.region_mask(region)] == 1)


def test_sandwich_and_monotone_in_control_set():
    grid = small_grid()
    terminal = parse("sin(2 * x) + 0.1 * x^2")
    small = ControlGrid((plain, with_jump))
    big = small.extended(double)
    static = solve_static(small, zero_driver, terminal, grid)
    dynamic = solve_dynamic(small, zero_driver, terminal, grid)
    for sol in static.per_control:
        assert np.all(sol.y.initial <= static.u0)
    assert np.all(static.u0 <= dynamic.u.initial)
    assert np.all(solve_dynamic(big, zero_driver, terminal, grid).u.data >= dynamic.u.data)


def test_argmax_is_deterministic():
    grid = small_grid()
    terminal = parse("x^3 - x")
    first = solve_dynamic(two_vols, zero_driver, terminal, grid).argmax
    for _ in range(3):
        assert np.array_equal(solve_dynamic(two_vols, zero_driver, terminal, grid).argmax, first)


def test_cfl_failure_names_control():
    grid = SpaceTimeGrid(-6.0, 6.0, 61, 1.0, 40)  # dt too large for a = 2 only
    with pytest.raises(CFLError) as info:
        solve_dynamic(two_vols, zero_driver, parse("x"), grid)
    assert info.value.control_index == 1


def test_k_increments_singleton_are_zero():
    grid = small_grid()
    controls = ControlGrid((with_jump,))
    driver = GeneratorSpec(kappa_y=0.5, h0=parse("x"))
    u = solve_dynamic(controls, driver, parse("x^2"), grid).u
    k = k_increments(u, controls, driver, parse("x^2"), grid)
    assert np.max(np.abs(k.increments)) <= tolerance
    report = minimality_report(k)
    assert report["minimum_condition"]
    assert report["negative_increments"] == 0
    assert np.max(np.abs(report["total_K"])) <= 1e-10


def test_minimum_condition_two_controls():
    grid = small_grid()
    u = solve_dynamic(two_vols, zero_driver, parse("x^2"), grid).u
    k = k_increments(u, two_vols, zero_driver, parse("x^2"), grid)
    report = minimality_report(k)
    assert report["minimum_condition"]
    assert report["max_of_min_increment"] <= 1e-10
    assert report["min_increment"] >= -1e-10
    centre = grid.nx // 2
    # a = 2 is optimal; a = 1 pays half a dt of curvature per step
    assert abs(k.increments[1, :, centre]).max() <= tolerance
    assert k.increments[0, 0, centre] == pytest.approx(0.5 * grid.dt * 2.0, rel=1e-4)
    assert report["total_K_at_center"][0] == pytest.approx(1.0, rel=1e-3)
    assert 0.0 <= report["total_K_at_center"][1] <= 1e-3


def test_dpp_check():
    grid = small_grid()
    report = dpp_check(two_vols, zero_driver, parse("x^2"), grid, 0.5, region)
    assert report["split_index"] == 50
    assert report["factorization_diff"] <= 1e-12
    assert report["static_over_split_excess"] <= 1e-10
    assert report["static_dynamic_gap_region"] <= 1e-2

    report = dpp_check(two_vols, zero_driver, parse("x^3"), grid, 0.5, region)
    assert report["factorization_diff"] <= 1e-12
    assert report["static_over_split_excess"] <= 1e-10

    with pytest.raises(ConfigError):
        dpp_check(two_vols, zero_driver, parse("x^2"), grid, 0.505)
    with pytest.raises(ConfigError):
        dpp_check(two_vols, zero_driver, parse("x^2"), grid, 1.0)


def test_nonconvex_gap():
    grid = small_grid()
    report = nonconvex_gap(two_vols, zero_driver, parse("x^3"), grid, region)
    assert report["margin"] > 1e-6
    assert report["dynamic"] > report["static"]

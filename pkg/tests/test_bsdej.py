import math

import numpy as np
import pytest

from levy2b.bsdej import (SpaceTimeGrid, ValueField, a_priori_bound, backward_step, boundary_influence,
                          build_kernel, cfl_max_dt, check_cfl, solve_bsdej, terminal_slice)
from levy2b.controls import ControlPoint, GeneratorSpec, JumpSlope, LevyMeasure
from levy2b.errors import CFLError, ConfigError, GridMismatchError, SpecError
from levy2b.spec_lang import parse

tolerance = 1e-12

zero_driver = GeneratorSpec()
plain = ControlPoint(1.0)
with_jump = ControlPoint(1.0, LevyMeasure(((1.0, 0.5),)))


def reference_grid(c, nx=321, x_lo=-8.0, x_hi=8.0):
    dx = (x_hi - x_lo) / (nx - 1)
    return SpaceTimeGrid.auto(x_lo, x_hi, nx, 1.0, cfl_max_dt(c, dx), 0.9)


def check_kernel_rows(kernel):
    sums = kernel.row_sums()
    assert np.max(np.abs(sums - 1.0)) <= tolerance
    assert kernel.matrix.data.min() >= -tolerance
    interior = np.arange(1, kernel.grid.nx - 1)
    free = interior[~kernel.clamped[interior]]
    assert np.max(np.abs(kernel.mean_displacement()[free])) <= 1e-12


def test_grid_validation():
    with pytest.raises(SpecError, match="nx >= 3"):
        SpaceTimeGrid(0.0, 1.0, 2, 1.0, 10)
    with pytest.raises(SpecError):
        SpaceTimeGrid(1.0, 0.0, 5, 1.0, 10)
    with pytest.raises(SpecError):
        SpaceTimeGrid(0.0, 1.0, 5, 1.0, 0)
    grid = SpaceTimeGrid(-1.0, 1.0, 21, 1.0, 8)
    assert grid.dx == pytest.approx(0.1)
    assert grid.dt == 0.125
    assert grid.time_index(0.5) == 4
    with pytest.raises(ConfigError):
        grid.time_index(0.3)


def test_auto_grid_respects_cfl():
    grid = SpaceTimeGrid.auto(-8.0, 8.0, 321, 1.0, cfl_max_dt(ControlPoint(2.0), 0.05), 0.9, nt_multiple=10)
    assert grid.nt == 890
    assert grid.dt <= 0.9 * cfl_max_dt(ControlPoint(2.0), 0.05)


def test_cfl_max_dt():
    assert cfl_max_dt(plain, 0.1) == pytest.approx(0.01)
    assert cfl_max_dt(ControlPoint(1.0, LevyMeasure(((0.5, 100.0),))), 0.1) == pytest.approx(0.005)
    assert cfl_max_dt(ControlPoint(2.0), 0.1) == pytest.approx(0.005)


def test_check_cfl_names_control():
    grid = SpaceTimeGrid(-1.0, 1.0, 21, 1.0, 50)  # dt = 0.02 > 0.01
    with pytest.raises(CFLError) as info:
        check_cfl(plain, grid, 3)
    assert info.value.control_index == 3
    assert info.value.max_dt == pytest.approx(0.01)
    assert "#3" in str(info.value)


def test_kernel_trinomial_row():
    grid = SpaceTimeGrid(-1.0, 1.0, 21, 1.0, 200)  # dx 0.1, dt 0.005
    kernel = build_kernel(plain, grid)
    row = kernel.row(10)
    assert row == pytest.approx({9: 0.25, 10: 0.5, 11: 0.25})
    assert kernel.row(0) == {0: 1.0}
    assert kernel.row(20) == {20: 1.0}


def test_kernel_splits_off_grid_jump():
    grid = SpaceTimeGrid(-2.0, 2.0, 41, 1.0, 400)  # dx 0.1, dt 0.0025
    lam = 2.0
    c = ControlPoint(1.0, LevyMeasure(((0.15, lam),)))
    row = build_kernel(c, grid).row(20)
    dt = grid.dt
    assert row[22] == pytest.approx(0.5 * lam * dt)
    # node +0.1 also carries diffusion and drift mass
    p_diff = dt / (2.0 * 0.01)
    shift = -dt * lam * 0.15 / 0.2
    assert row[21] == pytest.approx(p_diff + shift + 0.5 * lam * dt)


def test_kernel_invariants():
    for c in [plain, with_jump, ControlPoint(0.7, LevyMeasure(((0.13, 0.4), (-0.61, 1.3), (2.05, 0.2))))]:
        check_kernel_rows(build_kernel(c, reference_grid(c, nx=161)))


def test_backward_step_examples():
    grid = SpaceTimeGrid(-2.0, 2.0, 41, 1.0, 400)
    kernel = build_kernel(with_jump, grid)
    step = backward_step(kernel, zero_driver, with_jump, np.full(grid.nx, 7.0), 0.0)
    assert np.max(np.abs(step.y - 7.0)) <= tolerance

    const_driver = GeneratorSpec(h0=parse("1"))
    step = backward_step(kernel, const_driver, with_jump, np.zeros(grid.nx), 0.0)
    assert np.max(np.abs(step.y - grid.dt)) <= tolerance

    xs = grid.nodes
    step = backward_step(kernel, zero_driver, with_jump, xs.copy(), 0.0)
    interior = (xs > -0.95) & (xs < 0.95)
    assert np.max(np.abs(step.y[interior] - xs[interior])) <= tolerance


def test_u_field_is_the_jump_read():
    grid = SpaceTimeGrid(-4.0, 4.0, 81, 0.5, 200)
    c = ControlPoint(1.0, LevyMeasure(((0.25, 1.0), (-0.6, 0.5))))
    sol = solve_bsdej(c, zero_driver, parse("sin(x)"), grid)
    xs = grid.nodes
    for n in (0, grid.nt // 2, grid.nt - 1):
        nxt = sol.y.slice(n + 1)
        for k, e in enumerate(c.nu.marks):
            assert np.max(np.abs(sol.u[n, k] - (grid.interp(nxt, xs + e) - nxt))) <= tolerance
    assert set(sol.u_map(0, 40)) == {0.25, -0.6}


def test_solve_bsdej_reference_values():
    grid = reference_grid(with_jump)
    sol = solve_bsdej(with_jump, zero_driver, parse("x"), grid)
    assert np.array_equal(sol.y.terminal, terminal_slice(parse("x"), grid))
    assert abs(sol.y.at(0, 0.0)) <= 5e-3

    sol = solve_bsdej(with_jump, zero_driver, parse("x^2"), grid)
    assert abs(sol.y.at(0, 0.0) - 1.5) <= 2e-2


def test_solve_bsdej_linear_driver():
    grid = reference_grid(plain)
    sol = solve_bsdej(plain, GeneratorSpec(kappa_y=1.0), parse("x^2"), grid)
    assert abs(sol.y.at(0, 0.0) - math.e) <= 3e-2


def test_comparison_and_constant_shift():
    grid = SpaceTimeGrid(-4.0, 4.0, 81, 0.5, 100)
    g1 = parse("abs(x) - 1")
    g2 = parse("abs(x) - 1 + 0.1 * cos(3 * x)^2")
    driver = GeneratorSpec(kappa_y=0.4, kappa_z=0.0, slope=JumpSlope(0.3))
    lo = solve_bsdej(with_jump, driver, g1, grid).y.data
    hi = solve_bsdej(with_jump, driver, g2, grid).y.data
    assert np.all(lo <= hi)

    base = solve_bsdej(with_jump, zero_driver, g1, grid).y.data
    shifted = solve_bsdej(with_jump, zero_driver, parse("abs(x) - 1 + 2.5"), grid).y.data
    assert np.max(np.abs(shifted - base - 2.5)) <= 1e-12


def test_a_priori_bound():
    grid = SpaceTimeGrid(-3.0, 3.0, 61, 1.0, 200)
    driver = GeneratorSpec(kappa_y=0.8, h0=parse("sin(t + x)"))
    sol = solve_bsdej(with_jump, driver, parse("cos(x) * 2"), grid)
    assert np.max(np.abs(sol.y.data)) <= a_priori_bound(driver, parse("cos(x) * 2"), grid)


def test_boundary_influence_is_small_on_wide_domain():
    grid = SpaceTimeGrid(-7.0, 7.0, 141, 1.0, 300)
    influence = boundary_influence(plain, zero_driver, parse("x^2"), grid, (-1.0, 1.0), 2.0)
    assert 0.0 <= influence <= 1e-6


def test_value_field_shape_is_checked():
    grid = SpaceTimeGrid(-1.0, 1.0, 5, 1.0, 4)
    with pytest.raises(GridMismatchError):
        ValueField(grid, np.zeros((4, 5)))
    with pytest.raises(GridMismatchError):
        terminal_slice(np.zeros(4), grid)

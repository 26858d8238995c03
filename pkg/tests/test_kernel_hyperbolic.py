from __future__ import annotations

import math

import numpy as np
import pytest

from backstep.core import ScalarField1D, TriangularField, make_uniform_grid
from backstep.errors import InvalidArgument, NumericFailure
from backstep.kernel_hyperbolic import (
    HyperbolicPlantSpec,
    boundary_residual,
    characteristic_residual,
    hyperbolic_kernel_bound,
    solve_kernel_pide,
)


def _plant(n, f=lambda X, Xi: 0.5 + 0 * X, g=lambda x: 0.5 + 0 * x):
    grid = make_uniform_grid(n)
    return HyperbolicPlantSpec(TriangularField.from_function(grid, f), ScalarField1D.from_function(grid, g))


def test_homogeneous_plant_has_zero_kernel():
    sol = solve_kernel_pide(_plant(41, f=lambda X, Xi: 0 * X, g=lambda x: 0 * x))
    assert sol.K.sup() == 0.0 and sol.L.sup() == 0.0 and sol.gain_k1.sup() == 0.0


def test_constant_g_matches_exponential_kernel():
    sol = solve_kernel_pide(_plant(401, f=lambda X, Xi: 0 * X, g=lambda x: 1 + 0 * x))
    x = sol.K.grid.nodes
    np.testing.assert_allclose(sol.gain_k1.values, -np.exp(1 - x), atol=1e-4)
    assert sol.gain_k1.values[0] == pytest.approx(-math.e, abs=1e-4)


def test_inverse_kernel_for_constant_g():
    # with K = -e^{x - xi} the inverse kernel is L = -1
    sol = solve_kernel_pide(_plant(201, f=lambda X, Xi: 0 * X, g=lambda x: 1 + 0 * x))
    mask = np.tril(np.ones((201, 201), dtype=bool))
    assert np.max(np.abs(sol.L.values + 1)[mask]) <= 1e-4


def test_gain_is_top_row():
    sol = solve_kernel_pide(_plant(51))
    np.testing.assert_array_equal(sol.gain_k1.values, sol.K.values[-1])


def test_boundary_residual_after_convergence():
    plant = _plant(101, f=lambda X, Xi: np.cos(X) * Xi, g=lambda x: 0.4 - x**2)
    sol = solve_kernel_pide(plant)
    assert boundary_residual(sol, plant) <= 1e-8
    assert sol.residual < 1e-10


@pytest.mark.parametrize("n", [51, 101, 201])
def test_characteristic_relation_holds_to_roundoff(n):
    # the trapezoid march along x - xi = const satisfies its discrete relation exactly
    plant = _plant(n, f=lambda X, Xi: np.sin(X + Xi), g=lambda x: 0.5 + 0.5 * x)
    assert characteristic_residual(solve_kernel_pide(plant), plant) <= 1e-10


def test_self_convergence_order():
    tops = {}
    for n in (101, 201, 401, 801):
        tops[n] = solve_kernel_pide(_plant(n)).gain_k1.values
    e1 = np.max(np.abs(tops[101] - tops[201][::2]))
    e2 = np.max(np.abs(tops[201] - tops[401][::2]))
    e3 = np.max(np.abs(tops[401] - tops[801][::2]))
    assert math.log2(e1 / e2) >= 1.8 and math.log2(e2 / e3) >= 1.8


def test_bound_values():
    assert hyperbolic_kernel_bound(0, 0) == 0
    assert hyperbolic_kernel_bound(0.5, 0.5) == pytest.approx(math.e, rel=1e-15)
    with pytest.raises(InvalidArgument):
        hyperbolic_kernel_bound(-1, 0)


@pytest.mark.parametrize("seed", range(5))
def test_solution_stays_within_bound(seed):
    rng = np.random.default_rng(seed)
    a, b, w = rng.uniform(-1, 1, 3)
    plant = _plant(81, f=lambda X, Xi: a * np.cos(w * X * Xi), g=lambda x: b + 0.3 * np.sin(3 * x))
    sol = solve_kernel_pide(plant)
    bound = hyperbolic_kernel_bound(plant.f.sup(), plant.g.sup())
    assert max(sol.K.sup(), sol.L.sup()) <= bound


def test_grid_mismatch():
    with pytest.raises(InvalidArgument):
        solve_kernel_pide(_plant(11), grid=make_uniform_grid(12))


def test_iteration_cap_raises_with_residual():
    with pytest.raises(NumericFailure) as info:
        solve_kernel_pide(_plant(41, g=lambda x: 3 + 0 * x), max_iter=2)
    assert info.value.residual > 0

from __future__ import annotations

import math
from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import i1

from backstep.core import ScalarField1D, make_uniform_grid
from backstep.errors import InvalidArgument
from backstep.kernel_parabolic import (
    Dirichlet,
    Neumann,
    ParabolicPlantSpec,
    bottom_residual,
    diagonal_residual,
    parabolic_kernel_bound,
    solve_kernel_rd,
)


def _solve(n, lam=1.0, c=0.0, bc=Dirichlet()):
    grid = make_uniform_grid(n)
    field = lam if isinstance(lam, ScalarField1D) else ScalarField1D.from_function(grid, lambda x: lam + 0 * x)
    plant = ParabolicPlantSpec(field, c, bc)
    return plant, solve_kernel_rd(plant)


def _bessel(X, Xi, lam, weight):
    z = np.sqrt(lam * np.maximum(X**2 - Xi**2, 0.0))
    safe = np.where(z > 1e-8, z, 1.0)
    return -lam * weight * np.where(z > 1e-8, i1(safe) / safe, 0.5)


def _neumann_kx_at_one(xi, lam, terms=30):
    # term-by-term x-derivative of -lam x sum_m (lam (x^2 - xi^2) / 4)^m / (2 m! (m+1)!) at x = 1
    s = np.zeros_like(xi)
    for m in range(terms):
        a = lam**m / (4**m * 2 * factorial(m) * factorial(m + 1))
        r = 1 - xi**2
        s += a * (r**m + (2 * m * r ** (m - 1) if m else 0.0))
    return -lam * s


def test_zero_reaction_gives_zero_kernel():
    _, sol = _solve(41, lam=0.0)
    assert sol.K.sup() == 0.0 and sol.gain.k1d.sup() == 0.0


def test_dirichlet_bessel_value():
    _, sol = _solve(401)
    assert sol.K.values[400, 200] == pytest.approx(-0.274, abs=5e-4)


@pytest.mark.parametrize("lam,c", [(1.0, 0.0), (5.0, 0.5), (12.0, 1.0)])
def test_dirichlet_matches_bessel_with_shift(lam, c):
    # the shift enters only through lam + c
    _, sol = _solve(201, lam=lam, c=c)
    g = sol.K.grid
    X, Xi = np.meshgrid(g.nodes, g.nodes, indexing="ij")
    mask = np.tril(np.ones((g.n, g.n), dtype=bool))
    err = np.abs(sol.K.values - _bessel(X, Xi, lam + c, Xi))[mask]
    assert np.max(err) <= 5e-4 * (lam + c)


def test_neumann_corner_value():
    _, sol = _solve(101, bc=Neumann(2.0))
    assert sol.gain.k11 == pytest.approx(-0.5, abs=1e-10)


def test_neumann_kernel_and_gain_match_series():
    q = 2.0
    _, sol = _solve(201, lam=3.0, c=0.5, bc=Neumann(q))
    g = sol.K.grid
    X, Xi = np.meshgrid(g.nodes, g.nodes, indexing="ij")
    mask = np.tril(np.ones((g.n, g.n), dtype=bool))
    assert np.max(np.abs(sol.K.values - _bessel(X, Xi, 3.5, X))[mask]) <= 5e-6
    exact_gain = _neumann_kx_at_one(g.nodes, 3.5) + q * _bessel(1.0, g.nodes, 3.5, 1.0)
    np.testing.assert_allclose(sol.gain.k1n.values, exact_gain, rtol=1e-5)
    assert sol.derivative_consistent


@pytest.mark.parametrize("bc", [Dirichlet(), Neumann(1.5)])
def test_boundary_residuals(bc):
    lam = ScalarField1D.from_function(make_uniform_grid(201), lambda x: 4 + 3 * np.sin(2 * x))
    plant, sol = _solve(201, lam=lam, c=0.3, bc=bc)
    h = plant.grid.h
    assert diagonal_residual(sol, plant) <= 1e-8
    limit = 1e-8 if isinstance(bc, Dirichlet) else 10 * h**2
    assert bottom_residual(sol, plant) <= limit


@pytest.mark.parametrize("bc", [Dirichlet(), Neumann(2.0)])
def test_self_convergence_order(bc):
    grid_fn = lambda n: ScalarField1D.from_function(make_uniform_grid(n), lambda x: 6 + 4 * x**2)
    K = {n: _solve(n, lam=grid_fn(n), c=0.5, bc=bc)[1].K.values for n in (101, 201, 401)}
    e1 = np.max(np.abs(K[101] - K[201][::2, ::2]))
    e2 = np.max(np.abs(K[201] - K[401][::2, ::2]))
    assert math.log2(e1 / e2) >= 1.8


def test_bound_values():
    assert parabolic_kernel_bound(0, 0, Dirichlet()) == 0
    assert parabolic_kernel_bound(1, 0, Dirichlet()) == pytest.approx(math.exp(2), rel=1e-15)
    assert parabolic_kernel_bound(1, 0, Neumann(2.0)) == pytest.approx(2 * math.exp(4), rel=1e-15)
    with pytest.raises(InvalidArgument):
        parabolic_kernel_bound(-0.1, 0, Dirichlet())


@settings(max_examples=15, deadline=None)
@given(
    st.floats(-5, 10), st.floats(-3, 3), st.floats(0, 2),
    st.sampled_from([Dirichlet(), Neumann(1.2), Neumann(4.0)]),
)
def test_kernels_within_bound(a, b, c, bc):
    grid = make_uniform_grid(61)
    lam = ScalarField1D.from_function(grid, lambda x: a + b * np.cos(np.pi * x))
    _, sol = _solve(61, lam=lam, c=c, bc=bc)
    assert max(sol.K.sup(), sol.L.sup()) <= parabolic_kernel_bound(lam.sup(), c, bc)


@pytest.mark.parametrize("q", [1.0, 0.5, -2.0])
def test_neumann_requires_q_above_one(q):
    with pytest.raises(InvalidArgument):
        Neumann(q)


def test_negative_shift_rejected():
    with pytest.raises(InvalidArgument):
        ParabolicPlantSpec(ScalarField1D.constant(make_uniform_grid(11), 1.0), -0.1)


def test_too_small_grid_rejected():
    with pytest.raises(InvalidArgument):
        _solve(4)

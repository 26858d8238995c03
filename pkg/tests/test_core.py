from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from backstep.core import (
    H1,
    L2,
    ScalarField1D,
    TriangularField,
    UniformGrid,
    WeightedExp,
    compose,
    make_uniform_grid,
    norm,
    quad_trapezoid,
    volterra_apply,
    volterra_invert,
    volterra_solve,
)
from backstep.errors import InvalidArgument, NumericFailure

finite = st.floats(-10, 10, allow_nan=False)


class TestGrid:
    def test_smallest_grid(self):
        g = make_uniform_grid(2)
        assert g.h == 1.0
        assert list(g.nodes) == [0.0, 1.0]

    def test_five_nodes(self):
        assert list(make_uniform_grid(5).nodes) == [0.0, 0.25, 0.5, 0.75, 1.0]

    def test_right_endpoint_is_exact(self):
        g = make_uniform_grid(401)
        assert g.h == 0.0025
        assert g.nodes[400] == 1.0

    @pytest.mark.parametrize("n", [1, 0, -3, 2.5])
    def test_rejects_bad_sizes(self, n):
        with pytest.raises(InvalidArgument):
            make_uniform_grid(n)

    def test_nodes_are_read_only(self):
        with pytest.raises(ValueError):
            make_uniform_grid(5).nodes[0] = 1.0

    def test_weight_tables_integrate_constants(self):
        g = make_uniform_grid(11)
        np.testing.assert_allclose(g.trapezoid_weights.sum(axis=1), g.nodes, atol=1e-15)
        np.testing.assert_allclose(g.tail_weights.sum(axis=1), 1 - g.nodes, atol=1e-15)
        assert g.full_weights.sum() == pytest.approx(1.0, abs=1e-15)


class TestFields:
    def test_shape_mismatch_rejected(self):
        with pytest.raises(InvalidArgument):
            ScalarField1D(make_uniform_grid(5), np.zeros(4))

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidArgument):
            ScalarField1D(make_uniform_grid(3), np.array([0.0, np.nan, 1.0]))

    def test_values_are_frozen_copies(self):
        g = make_uniform_grid(3)
        raw = np.zeros(3)
        f = ScalarField1D(g, raw)
        raw[0] = 5.0
        assert f.values[0] == 0.0
        with pytest.raises(ValueError):
            f.values[1] = 1.0

    def test_interpolates_between_nodes(self):
        f = ScalarField1D.from_function(make_uniform_grid(3), lambda x: x**2)
        assert f(0.25) == pytest.approx(0.125)

    def test_triangular_traces(self):
        g = make_uniform_grid(6)
        K = TriangularField.from_function(g, lambda X, Xi: X + 10 * Xi)
        np.testing.assert_allclose(K.top().values, 1 + 10 * g.nodes)
        np.testing.assert_allclose(K.bottom().values, g.nodes)
        np.testing.assert_allclose(K.diagonal().values, 11 * g.nodes)

    def test_triangular_upper_part_is_zero(self):
        g = make_uniform_grid(6)
        K = TriangularField.from_function(g, lambda X, Xi: np.ones_like(X))
        assert np.all(np.triu(K.values, 1) == 0)

    def test_grid_mismatch_rejected(self):
        K = TriangularField.zeros(make_uniform_grid(5))
        with pytest.raises(InvalidArgument):
            volterra_apply(K, ScalarField1D.constant(make_uniform_grid(6), 1.0))


class TestQuadrature:
    def test_linear_is_exact(self):
        f = ScalarField1D.from_function(make_uniform_grid(7), lambda x: x)
        assert quad_trapezoid(f, 0, 1) == 0.5

    def test_constant_on_inner_interval(self):
        f = ScalarField1D.constant(make_uniform_grid(5), 1.0)
        assert quad_trapezoid(f, 0.25, 0.75) == 0.5

    def test_quadratic_within_error_bound(self):
        f = ScalarField1D.from_function(make_uniform_grid(401), lambda x: x**2)
        assert abs(quad_trapezoid(f, 0, 1) - 1 / 3) <= 1e-5

    def test_off_node_limits(self):
        f = ScalarField1D.from_function(make_uniform_grid(11), lambda x: 2 * x)
        assert quad_trapezoid(f, 0.13, 0.77) == pytest.approx(0.77**2 - 0.13**2, abs=1e-15)

    def test_reversed_limits_rejected(self):
        with pytest.raises(InvalidArgument):
            quad_trapezoid(ScalarField1D.constant(make_uniform_grid(3), 1.0), 0.6, 0.2)

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(finite, min_size=9, max_size=9),
        st.floats(0, 1), st.floats(0, 1), st.floats(0, 1),
    )
    def test_additive_over_adjacent_intervals(self, vals, a, b, c):
        a, b, c = sorted((a, b, c))
        f = ScalarField1D(make_uniform_grid(9), np.array(vals))
        whole = quad_trapezoid(f, a, c)
        parts = quad_trapezoid(f, a, b) + quad_trapezoid(f, b, c)
        assert parts == pytest.approx(whole, rel=1e-12, abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(finite, min_size=7, max_size=7), st.lists(finite, min_size=7, max_size=7), finite)
    def test_linear_in_integrand(self, u, v, alpha):
        g = make_uniform_grid(7)
        fu, fv = ScalarField1D(g, np.array(u)), ScalarField1D(g, np.array(v))
        combo = ScalarField1D(g, alpha * fu.values + fv.values)
        expected = alpha * quad_trapezoid(fu) + quad_trapezoid(fv)
        assert quad_trapezoid(combo) == pytest.approx(expected, rel=1e-12, abs=1e-10)


class TestNorms:
    def test_unit_constant(self):
        assert norm(ScalarField1D.constant(make_uniform_grid(11), 1.0), L2) == pytest.approx(1.0, abs=1e-15)

    def test_h1_of_identity(self):
        f = ScalarField1D.from_function(make_uniform_grid(401), lambda x: x)
        assert norm(f, H1) == pytest.approx(math.sqrt(1 / 3 + 1), abs=1e-4)

    def test_weighted_exponential(self):
        f = ScalarField1D.constant(make_uniform_grid(401), 1.0)
        assert norm(f, WeightedExp(c=1.0)) == pytest.approx(math.e - 1, abs=1e-5)

    def test_weighted_with_divisor_and_negative_sign(self):
        g = make_uniform_grid(401)
        f = ScalarField1D.constant(g, 1.0)
        two = ScalarField1D.constant(g, 2.0)
        value = norm(f, WeightedExp(c=1.0, sign=-1, divisor=two))
        assert value == pytest.approx((1 - math.exp(-1)) / 2, abs=1e-5)

    def test_h1_needs_three_nodes(self):
        with pytest.raises(InvalidArgument):
            norm(ScalarField1D.constant(make_uniform_grid(2), 1.0), H1)

    def test_bad_weight_sign(self):
        with pytest.raises(InvalidArgument):
            WeightedExp(c=1.0, sign=2)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(3, 40).flatmap(lambda n: st.lists(finite, min_size=n, max_size=n)))
    def test_l2_never_exceeds_h1(self, vals):
        f = ScalarField1D(make_uniform_grid(len(vals)), np.array(vals))
        assert norm(f, L2) <= norm(f, H1) * (1 + 1e-14)


class TestVolterra:
    def test_zero_kernel_is_identity(self):
        g = make_uniform_grid(9)
        f = ScalarField1D.from_function(g, np.sin)
        out = volterra_apply(TriangularField.zeros(g), f)
        np.testing.assert_array_equal(out.values, f.values)

    def test_unit_kernel_forward(self):
        g = make_uniform_grid(21)
        K = TriangularField.from_function(g, lambda X, Xi: np.ones_like(X))
        out = volterra_apply(K, ScalarField1D.constant(g, 1.0), "forward")
        np.testing.assert_allclose(out.values, 1 - g.nodes, atol=1e-14)

    def test_unknown_direction(self):
        g = make_uniform_grid(5)
        with pytest.raises(InvalidArgument):
            volterra_apply(TriangularField.zeros(g), ScalarField1D.constant(g, 1.0), "sideways")

    def test_invert_zero(self):
        g = make_uniform_grid(9)
        assert volterra_invert(TriangularField.zeros(g)).sup() == 0.0

    def test_invert_unit_kernel_gives_exponential(self):
        g = make_uniform_grid(401)
        K = TriangularField.from_function(g, lambda X, Xi: np.ones_like(X))
        L = volterra_invert(K)
        assert L.values[-1, 0] == pytest.approx(math.e, abs=1e-4)
        X, Xi = np.meshgrid(g.nodes, g.nodes, indexing="ij")
        mask = np.tril(np.ones((g.n, g.n), dtype=bool))
        assert np.max(np.abs(L.values - np.exp(X - Xi))[mask]) <= 1e-4

    def test_reciprocity_holds_on_the_grid(self):
        g = make_uniform_grid(51)
        K = TriangularField.from_function(g, lambda X, Xi: np.cos(3 * X) * Xi - 0.5)
        L = volterra_invert(K)
        resid = L.values - K.values - compose(K.values, L.values, g.h)
        assert np.max(np.abs(np.tril(resid))) <= 1e-12

    def test_round_trip_shrinks_under_refinement(self):
        errs = []
        for n in (101, 201, 401):
            g = make_uniform_grid(n)
            K = TriangularField.from_function(g, lambda X, Xi: np.exp(-X) * np.sin(2 * Xi) + 1)
            L = volterra_invert(K)
            f = ScalarField1D.from_function(g, lambda x: np.cos(5 * x) + x)
            back = volterra_apply(L, volterra_apply(K, f, "forward"), "inverse")
            errs.append(np.max(np.abs(back.values - f.values)))
        assert errs[0] > errs[1] > errs[2]
        assert errs[2] <= 1e-4

    def test_non_convergence_reports_residual(self):
        g = make_uniform_grid(41)
        K = TriangularField.from_function(g, lambda X, Xi: 60 * np.ones_like(X))
        with pytest.raises(NumericFailure) as info:
            volterra_solve(K, K, max_iter=3)
        assert info.value.residual > 0

    @settings(max_examples=40, deadline=None)
    @given(
        st.lists(finite, min_size=8, max_size=8),
        st.lists(finite, min_size=8, max_size=8),
        finite, finite,
    )
    def test_apply_is_linear(self, u, v, a, b):
        g = make_uniform_grid(8)
        K = TriangularField.from_function(g, lambda X, Xi: X - 2 * Xi + 0.3)
        fu, fv = ScalarField1D(g, np.array(u)), ScalarField1D(g, np.array(v))
        lhs = volterra_apply(K, ScalarField1D(g, a * fu.values + b * fv.values))
        rhs = a * volterra_apply(K, fu).values + b * volterra_apply(K, fv).values
        np.testing.assert_allclose(lhs.values, rhs, atol=1e-12 * (1 + np.max(np.abs(rhs))))


def test_grid_equality_is_by_size():
    assert UniformGrid(7) == make_uniform_grid(7)

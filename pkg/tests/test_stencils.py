"""Finite-difference weight generation against independent oracles."""

from fractions import Fraction
from math import factorial

import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st

from simflow.stencils import (
    StencilError,
    centered_stencil,
    fd_weights,
    ko_difference_weights,
    ko_dissipation,
)


class TestWeightsOracle:
    @pytest.mark.parametrize("m", [1, 2, 3, 4])
    @pytest.mark.parametrize("width", [3, 5, 7, 9])
    def test_matches_sympy(self, m, width):
        if width <= m:
            pytest.skip("underdetermined")
        r = width // 2
        points = [sympy.Integer(o) for o in range(-r, r + 1)]
        oracle = sympy.finite_diff_weights(m, points, 0)[m][-1]
        ours = fd_weights(m, range(-r, r + 1))
        for got, want in zip(ours, oracle):
            assert Fraction(int(sympy.fraction(want)[0]), int(sympy.fraction(want)[1])) == got

    def test_classic_first_derivative(self):
        assert fd_weights(1, [-2, -1, 0, 1, 2]) == [
            Fraction(1, 12), Fraction(-2, 3), Fraction(0), Fraction(2, 3), Fraction(-1, 12)]

    def test_classic_second_derivative(self):
        assert fd_weights(2, [-2, -1, 0, 1, 2]) == [
            Fraction(-1, 12), Fraction(4, 3), Fraction(-5, 2), Fraction(4, 3), Fraction(-1, 12)]

    def test_polynomial_exactness(self):
        # five-point stencil applied to x^deg at 0: only deg == m survives
        for m in (1, 2):
            w = fd_weights(m, [-2, -1, 0, 1, 2])
            for deg in range(5):
                applied = sum(wi * Fraction(o) ** deg for wi, o in zip(w, [-2, -1, 0, 1, 2]))
                assert applied == (factorial(m) if deg == m else 0)

    def test_duplicate_offsets(self):
        with pytest.raises(StencilError):
            fd_weights(1, [0, 0, 1])

    def test_too_few_points(self):
        with pytest.raises(StencilError):
            fd_weights(3, [-1, 0, 1])


@settings(max_examples=60, deadline=None)
@given(st.sets(st.integers(min_value=-6, max_value=6), min_size=3, max_size=7),
       st.integers(min_value=1, max_value=2))
def test_moment_conditions_exact(offsets, m):
    offsets = sorted(offsets)
    if len(offsets) <= m:
        return
    w = fd_weights(m, offsets)
    for k in range(len(offsets)):
        moment = sum(wi * Fraction(o) ** k for wi, o in zip(w, offsets))
        assert moment == (factorial(m) if k == m else 0)


class TestCentered:
    def test_radius_and_scaling(self):
        s = centered_stencil(2, 5, "x")
        assert s.radius == 2
        assert s.order == 2
        assert s.offsets == (-2, -1, 0, 1, 2)

    def test_even_width_rejected(self):
        with pytest.raises(StencilError):
            centered_stencil(1, 4, "x")


class TestDissipation:
    def test_difference_weights(self):
        assert ko_difference_weights(1) == [1, -2, 1]
        assert ko_difference_weights(2) == [1, -4, 6, -4, 1]
        assert ko_difference_weights(3) == [1, -6, 15, -20, 15, -6, 1]

    def test_annihilates_low_degree_polynomials(self):
        w = ko_difference_weights(3)
        for deg in range(6):
            assert sum(wi * o ** deg for wi, o in zip(w, range(-3, 4))) == 0

    def test_negative_semi_definite_on_periodic_grid(self):
        # the operator must damp: <u, Q u> < 0 for a non-polynomial mode
        n = 64
        dx = 1.0 / n
        x = (np.arange(n) + 0.5) * dx
        u = np.sin(2 * np.pi * x)
        q = ko_dissipation(3, 0.1, dx, "x")
        qu = np.zeros(n)
        for off, w in zip(q.offsets, q.weights):
            qu += w * np.roll(u, -off)
        assert np.dot(u, qu) < 0

    def test_even_order_sign_flips(self):
        n = 64
        dx = 1.0 / n
        u = np.sin(2 * np.pi * (np.arange(n) + 0.5) * dx)
        q = ko_dissipation(2, 0.1, dx, "x")
        qu = np.zeros(n)
        for off, w in zip(q.offsets, q.weights):
            qu += w * np.roll(u, -off)
        assert np.dot(u, qu) < 0

    def test_negative_sigma_rejected(self):
        with pytest.raises(StencilError):
            ko_dissipation(3, -0.5, 0.1, "x")


def test_sbp_identity_periodic():
    # summation by parts: <u, Dv> + <Du, v> = 0 on a periodic grid
    n = 64
    dx = 1.0 / n
    rng = np.random.default_rng(11)
    u = rng.standard_normal(n)
    v = rng.standard_normal(n)
    s = centered_stencil(1, 5, "x")

    def apply(arr):
        out = np.zeros(n)
        for off, w in zip(s.offsets, s.weights):
            out += w * np.roll(arr, -off)
        return out / dx

    assert abs(np.dot(u, apply(v)) + np.dot(apply(u), v)) < 1e-12

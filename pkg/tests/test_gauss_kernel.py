"""Quadrature engine: rules, one- and two-point Gaussian expectations."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from dropout_mft import activations as acts
from dropout_mft.errors import ClassMismatchError, InvalidArgument, NumericDomainError
from dropout_mft.gauss_kernel import (
    BivariateGaussianSpec,
    default_rule,
    expect1,
    expect2,
    make_panel_rule,
    make_rule,
    price_moments,
)


def quad_gauss(f, q):
    """Adaptive-quadrature oracle for int Dz f(sqrt(q) z)."""
    sq = math.sqrt(q)
    g = lambda z: f(sq * z) * math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    pieces = [integrate.quad(g, a, b, epsabs=1e-14, epsrel=1e-13, limit=200)[0] for a, b in ((-40, 0), (0, 40))]
    return math.fsum(pieces)


def relu_kernel(q, c):
    """Arc-cosine closed form for E[ReLU(u1) ReLU(u2)]."""
    return q / (2.0 * math.pi) * (math.sqrt(1.0 - c * c) + (math.pi - math.acos(c)) * c)


class TestRules:
    @pytest.mark.parametrize("maker", [make_rule, make_panel_rule])
    def test_normalization_and_symmetry(self, maker):
        for order in (20, 64, 101):
            r = maker(order)
            assert abs(r.weights.sum() - 1.0) < 1e-14
            np.testing.assert_array_equal(r.nodes, -r.nodes[::-1])
            np.testing.assert_array_equal(r.weights, r.weights[::-1])
            assert abs(r.integrate(r.nodes**2) - 1.0) < 1e-12

    def test_gauss_hermite_moments(self):
        r = make_rule(20)
        assert abs(r.integrate(np.ones_like(r.nodes)) - 1.0) < 1e-14
        assert abs(r.integrate(r.nodes**2) - 1.0) < 1e-13

    def test_fourth_moment_against_monte_carlo(self):
        rule_value = make_rule(101).integrate(make_rule(101).nodes ** 4)
        assert abs(rule_value - 3.0) < 1e-12
        z = np.random.default_rng(3).standard_normal(2_000_000)
        x4 = z**4
        mc, se = x4.mean(), x4.std(ddof=1) / math.sqrt(z.size)
        assert abs(mc - rule_value) < 4 * se

    @pytest.mark.parametrize("order", [1, 0, -3, 2.5])
    def test_bad_order(self, order):
        with pytest.raises(InvalidArgument):
            make_rule(order)
        with pytest.raises(InvalidArgument):
            make_panel_rule(order)

    def test_rules_are_immutable(self):
        r = default_rule()
        with pytest.raises(ValueError):
            r.nodes[0] = 0.0


class TestExpect1:
    def test_relu_square(self):
        assert abs(expect1(lambda u: np.maximum(u, 0) ** 2, 2.0, breakpoints=(0.0,)) - 1.0) < 1e-14

    def test_identity_square(self):
        assert abs(expect1(lambda u: u * u, 3.0) - 3.0) < 1e-13

    @pytest.mark.parametrize("q", [0.1, 1.0, 3.0, 10.0])
    def test_tanh_square_against_adaptive(self, q):
        want = quad_gauss(lambda u: math.tanh(u) ** 2, q)
        assert abs(expect1(lambda u: np.tanh(u) ** 2, q) - want) < 1e-12

    @pytest.mark.parametrize("q", [0.5, 2.0])
    def test_gelu_square_against_adaptive(self, q):
        f = lambda u: (u * 0.5 * (1 + math.erf(u / math.sqrt(2)))) ** 2
        assert abs(acts.moment(acts.GELU, q) - quad_gauss(f, q)) < 1e-12

    def test_zero_variance(self):
        assert expect1(lambda u: np.cos(u), 0.0) == 1.0

    def test_negative_variance(self):
        with pytest.raises(InvalidArgument):
            expect1(np.tanh, -1.0)

    def test_nonfinite_reports_node(self):
        with pytest.raises(NumericDomainError) as info, np.errstate(divide="ignore", invalid="ignore"):
            expect1(lambda u: 1.0 / (u - u), 1.0)
        assert info.value.node is not None


class TestExpect2:
    def test_relu_independent(self):
        got = expect2(acts.RELU, acts.RELU, BivariateGaussianSpec(1.0, 0.0), breakpoints_f=(0.0,), breakpoints_g=(0.0,))
        assert abs(got - 1.0 / (2.0 * math.pi)) < 1e-14

    @pytest.mark.parametrize("c", [-0.9, -0.3, 0.5, 0.8, 0.99])
    def test_relu_arc_cosine(self, c):
        got = expect2(acts.RELU, acts.RELU, BivariateGaussianSpec(1.0, c), breakpoints_f=(0.0,), breakpoints_g=(0.0,))
        assert abs(got - relu_kernel(1.0, c)) < 1e-12

    @pytest.mark.parametrize("act", [acts.TANH, acts.GELU, acts.RELU])
    def test_aligned_collapse(self, act):
        for q in (0.5, 2.0):
            got = expect2(act, act, BivariateGaussianSpec(q, 1.0), breakpoints_f=act.kinks, breakpoints_g=act.kinks)
            assert got == pytest.approx(acts.moment(act, q), abs=1e-14)

    def test_antialigned(self):
        got = expect2(np.tanh, np.tanh, BivariateGaussianSpec(1.0, -1.0))
        assert got == pytest.approx(-acts.moment(acts.TANH, 1.0), abs=1e-14)

    @pytest.mark.parametrize("c", [1.0 + 1e-12, -1.5])
    def test_bad_correlation(self, c):
        with pytest.raises(InvalidArgument):
            BivariateGaussianSpec(1.0, c)

    def test_bad_variance(self):
        with pytest.raises(InvalidArgument):
            BivariateGaussianSpec(0.0, 0.5)

    @settings(max_examples=40, deadline=None)
    @given(q=st.floats(0.1, 10.0), c=st.floats(-0.999, 0.999))
    def test_symmetry(self, q, c):
        spec = BivariateGaussianSpec(q, c)
        f, g = np.tanh, acts.GELU.value
        assert abs(expect2(f, g, spec) - expect2(g, f, spec)) < 1e-13

    @settings(max_examples=40, deadline=None)
    @given(q=st.floats(0.1, 10.0), c=st.floats(-0.95, 0.95), smooth=st.sampled_from(["tanh", "gelu"]))
    def test_price_theorem(self, q, c, smooth):
        act = acts.get_activation(smooth)

        def k(cc):
            return expect2(act.value, act.value, BivariateGaussianSpec(q, cc))

        def central(step):
            return (k(c + step) - k(c - step)) / (2 * step)

        d = (4 * central(5e-4) - central(1e-3)) / 3.0
        assert abs(d - q * expect2(act.deriv, act.deriv, BivariateGaussianSpec(q, c))) < 1e-6

    @settings(max_examples=25, deadline=None)
    @given(q=st.floats(0.1, 10.0), name=st.sampled_from(["relu", "tanh"]))
    def test_monotone_in_c(self, q, name):
        act = acts.get_activation(name)
        cs = np.linspace(0.0, 1.0, 21)
        vals = [expect2(act, act, BivariateGaussianSpec(q, float(c)), breakpoints_f=act.kinks, breakpoints_g=act.kinks) for c in cs]
        assert np.all(np.diff(vals) >= -1e-14)


class TestOrderStability:
    @pytest.mark.parametrize("name", ["relu", "tanh", "gelu", "identity"])
    @pytest.mark.parametrize("q", [0.1, 1.0, 3.0, 10.0])
    def test_101_vs_201(self, name, q):
        act = acts.get_activation(name)
        lo, hi = make_panel_rule(101), make_panel_rule(201)
        assert abs(acts.moment(act, q, lo) - acts.moment(act, q, hi)) < 1e-10
        for c in (0.0, 0.5, 0.9):
            a = expect2(act, act, BivariateGaussianSpec(q, c), lo, breakpoints_f=act.kinks, breakpoints_g=act.kinks)
            b = expect2(act, act, BivariateGaussianSpec(q, c), hi, breakpoints_f=act.kinks, breakpoints_g=act.kinks)
            assert abs(a - b) < 1e-10


class TestPriceMoments:
    @pytest.mark.parametrize("q", [0.3, 1.0, 7.0])
    def test_relu(self, q):
        first, second = price_moments(acts.RELU, q)
        assert abs(first - 0.5) < 1e-15
        assert second is None

    def test_relu_second_requested(self):
        with pytest.raises(ClassMismatchError):
            price_moments(acts.RELU, 1.0, require_second=True)

    def test_identity(self):
        assert price_moments(acts.IDENTITY, 2.0) == (pytest.approx(1.0, abs=1e-14), 0.0)

    def test_tanh_against_finite_difference(self):
        # dK/dc at c = 1 from inside the domain, Richardson on one-sided steps
        def k(c):
            return expect2(np.tanh, np.tanh, BivariateGaussianSpec(1.0, c))

        def one_sided(step):
            return (k(1.0) - k(1.0 - step)) / step

        d1, d2, d4 = one_sided(4e-4), one_sided(2e-4), one_sided(1e-4)
        r1, r2 = 2 * d2 - d1, 2 * d4 - d2
        d = (4 * r2 - r1) / 3.0
        first, _ = price_moments(acts.TANH, 1.0)
        assert abs(d - first) < 1e-7

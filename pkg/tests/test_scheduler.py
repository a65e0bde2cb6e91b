"""Depth profiles, the xi_eff objective and the reach linear program."""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dropout_mft import scheduler as sch
from dropout_mft.acceptance import random_feasible_profiles
from dropout_mft.errors import InfeasibleBudget, InvalidArgument, UnreachableField
from dropout_mft.mft import ChannelParams, critical_sigma_w, dropout_field

L, H_BAR = 6, 0.1


def xi_kinked(kind, h_max=0.2):
    return sch.xi_eff(sch.schedule_library(kind, H_BAR, h_max, L), "kinked")


class TestXiEff:
    @pytest.mark.parametrize(
        "kind, h_max, want",
        [
            ("constant", 0.2, 3.20),
            ("step_early", 0.2, 5.09),
            ("step_late", 0.2, 5.09),
            ("big_step", 0.3, 6.67),
            ("linear_inc", 0.2, 3.73),
            ("linear_dec", 0.2, 3.73),
            ("double", 0.2, 2.54),
            ("triple", 0.2, 2.22),
        ],
    )
    def test_table(self, kind, h_max, want):
        assert round(xi_kinked(kind, h_max), 2) == want

    def test_constant_closed_form(self):
        kappa = 2 * math.sqrt(2) / (3 * math.pi)
        want = 1.0 / (1.5 * kappa ** (2 / 3) * 0.1 ** (1 / 3))
        assert xi_kinked("constant") == pytest.approx(want, rel=1e-14)

    def test_none_is_infinite(self):
        assert xi_kinked("none") == math.inf

    def test_zero_layers_contribute_nothing(self):
        a = sch.ScheduleProfile.from_layers([0.2, 0.0, 0.0], 0.2)
        b = sch.ScheduleProfile.from_layers([0.2], 0.2)
        assert sch.xi_eff(a) == pytest.approx(3 * sch.xi_eff(b), rel=1e-15)

    def test_smooth_needs_coeff(self):
        prof = sch.schedule_library("constant", H_BAR, 0.2, L)
        with pytest.raises(InvalidArgument):
            sch.xi_eff(prof, "smooth")
        assert sch.xi_eff(prof, "smooth", sch.smooth_coeff(0.5)) == pytest.approx(1 / math.sqrt(0.1))

    def test_bad_class(self):
        with pytest.raises(InvalidArgument):
            sch.xi_eff(sch.schedule_library("constant", H_BAR, 0.2, L), "lumpy")

    def test_negative_field(self):
        with pytest.raises(InvalidArgument):
            sch.ScheduleProfile.from_layers([0.1, -0.1], 0.2)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0.0, 0.3), min_size=2, max_size=12), st.randoms(use_true_random=False))
    def test_permutation_invariance(self, h, rnd):
        perm = list(h)
        rnd.shuffle(perm)
        a = sch.ScheduleProfile.from_layers(h, 0.3)
        b = sch.ScheduleProfile.from_layers(perm, 0.3)
        assert sch.xi_eff(a) == sch.xi_eff(b)
        assert sch.xi_eff(a, "smooth", 1.0) == sch.xi_eff(b, "smooth", 1.0)

    @pytest.mark.parametrize("cls, coeff", [("kinked", None), ("smooth", 1.0)])
    def test_constant_minimizes(self, cls, coeff):
        const = sch.xi_eff(sch.schedule_library("constant", H_BAR, 0.2, L), cls, coeff)
        step = sch.xi_eff(sch.optimal_step(H_BAR, 0.2, L), cls, coeff)
        profiles = random_feasible_profiles(np.random.default_rng(5), 10_000, L, H_BAR, 0.2)
        for row in profiles:
            xi = sch.xi_eff(sch.ScheduleProfile.from_layers(row, 0.2), cls, coeff)
            assert xi >= const - 1e-12
            assert xi <= step + 1e-12


class TestOptimalStep:
    def test_half(self):
        assert sch.optimal_step(0.1, 0.2, 6).h_per_layer == (0.2, 0.2, 0.2, 0.0, 0.0, 0.0)

    def test_third(self):
        assert sch.optimal_step(0.1, 0.3, 6).h_per_layer == (0.3, 0.3, 0.0, 0.0, 0.0, 0.0)

    def test_full(self):
        assert sch.optimal_step(0.2, 0.2, 5).h_per_layer == (0.2,) * 5

    def test_partial_layer(self):
        prof = sch.optimal_step(0.1, 0.25, 6)
        assert prof.h_per_layer[:2] == (0.25, 0.25)
        assert prof.h_per_layer[2] == pytest.approx(0.1)
        assert prof.h_per_layer[3:] == (0.0, 0.0, 0.0)

    def test_infeasible(self):
        with pytest.raises(InfeasibleBudget):
            sch.optimal_step(0.3, 0.2, 6)

    @settings(max_examples=100, deadline=None)
    @given(frac=st.floats(0.0, 1.0), h_max=st.floats(0.01, 2.0), depth=st.integers(1, 40))
    def test_budget_conserved(self, frac, h_max, depth):
        h_bar = frac * h_max
        prof = sch.optimal_step(h_bar, h_max, depth)
        assert abs(math.fsum(prof.h_per_layer) / depth - h_bar) < 1e-12
        assert all(0.0 <= x <= h_max for x in prof.h_per_layer)
        assert list(prof.h_per_layer) == sorted(prof.h_per_layer, reverse=True)

    @pytest.mark.parametrize(
        "cls, r, want",
        [("smooth", 2.0, math.sqrt(2.0)), ("kinked", 2.0, 2 ** (2 / 3)), ("smooth", 1.0, 1.0), ("kinked", 1.0, 1.0)],
    )
    def test_ratio(self, cls, r, want):
        assert sch.step_vs_uniform_ratio(0.1, 0.1 * r, cls) == pytest.approx(want, rel=1e-14)

    def test_ratio_matches_xi(self):
        ratio = sch.step_vs_uniform_ratio(0.1, 0.2, "kinked")
        assert xi_kinked("step_early") / xi_kinked("constant") == pytest.approx(ratio, rel=1e-12)


class TestLibrary:
    @pytest.mark.parametrize("kind", sch.KINDS)
    def test_budget(self, kind):
        prof = sch.schedule_library(kind, H_BAR, 0.3, L)
        scale = {"double": 2.0, "triple": 3.0, "none": 0.0}.get(kind, 1.0)
        assert abs(prof.h_bar - scale * H_BAR) < 1e-12
        assert prof.label == kind

    def test_linear_ramp(self):
        inc = sch.schedule_library("linear_inc", H_BAR, 0.2, L).h_per_layer
        dec = sch.schedule_library("linear_dec", H_BAR, 0.2, L).h_per_layer
        np.testing.assert_allclose(inc, 0.2 * np.arange(6) / 5, atol=1e-15)
        assert dec == inc[::-1]

    def test_step_late_reach_differs(self):
        w = sch.reach_weights(L, 4.0)
        early = sch.schedule_library("step_early", H_BAR, 0.2, L)
        late = sch.schedule_library("step_late", H_BAR, 0.2, L)
        assert early.reach(w) > late.reach(w)

    def test_big_step_hits_cap_exactly(self):
        assert sch.schedule_library("big_step", H_BAR, 0.3, L).h_per_layer == (0.3, 0.3, 0.0, 0.0, 0.0, 0.0)

    def test_unknown(self):
        with pytest.raises(InvalidArgument):
            sch.schedule_library("zigzag", H_BAR, 0.2, L)

    @pytest.mark.parametrize("kind, h_max", [("big_step", 0.2), ("linear_inc", 0.15), ("constant", 0.05)])
    def test_infeasible(self, kind, h_max):
        with pytest.raises(InfeasibleBudget):
            sch.schedule_library(kind, H_BAR, h_max, L)


class TestReach:
    def test_last_layer_zero(self):
        assert sch.reach_weights(12, 4.0).weights[-1] == 0.0

    def test_saturation(self):
        w = sch.reach_weights(500, 4.0)
        assert w.weights[0] == pytest.approx(4.0, rel=1e-12)

    def test_plug_in(self):
        w = sch.reach_weights(12, 4.0)
        assert w.weights[5] == pytest.approx(4 * (1 - math.exp(-1.5)), rel=1e-14)
        assert round(w.weights[5], 4) == 3.1075

    def test_deep_weights_may_tie(self):
        w = sch.reach_weights(500, 4.0).weights
        assert w[0] == w[1] == 4.0

    def test_increasing_rejected(self):
        with pytest.raises(InvalidArgument):
            sch.ReachWeights((1.0, 2.0, 0.0), 3.0, 3)

    def test_monotone(self):
        w = np.array(sch.reach_weights(30, 2.5).weights)
        assert np.all(np.diff(w) < 0)
        assert np.all(w <= 2.5)

    @pytest.mark.parametrize("L_, xi", [(0, 1.0), (3, 0.0), (3, -1.0)])
    def test_bad(self, L_, xi):
        with pytest.raises(InvalidArgument):
            sch.reach_weights(L_, xi)

    def test_lp_is_step_early(self):
        prof = sch.frontload_lp(H_BAR, 0.2, sch.reach_weights(L, 4.0))
        assert prof.h_per_layer == sch.optimal_step(H_BAR, 0.2, L).h_per_layer

    def test_lp_zero_budget(self):
        assert sch.frontload_lp(0.0, 0.2, sch.reach_weights(L, 4.0)).h_per_layer == (0.0,) * L

    def test_lp_infeasible(self):
        with pytest.raises(InfeasibleBudget):
            sch.frontload_lp(0.3, 0.2, sch.reach_weights(L, 4.0))

    def test_lp_beats_random(self):
        w = sch.reach_weights(L, 4.0)
        best = sch.frontload_lp(H_BAR, 0.2, w).reach(w)
        profiles = random_feasible_profiles(np.random.default_rng(17), 10_000, L, H_BAR, 0.2)
        assert np.all(profiles @ np.array(w.weights) <= best + 1e-12)

    @pytest.mark.parametrize("depth, h_bar, h_max", [(4, 0.1, 0.3), (6, 0.1, 0.2), (7, 0.1, 0.25), (8, 0.05, 0.15)])
    def test_lp_exhaustive(self, depth, h_bar, h_max):
        w = sch.reach_weights(depth, 3.0)
        best = sch.frontload_lp(h_bar, h_max, w)
        for perm in set(itertools.permutations(best.h_per_layer)):
            value = sch.ScheduleProfile.from_layers(perm, h_max).reach(w)
            if perm == best.h_per_layer:
                continue
            assert value < best.reach(w)

    def test_ratio_full_fraction(self):
        for tau in (1e-6, 0.5, 3.0, 50.0):
            assert sch.reach_ratio(tau, 1.0) == pytest.approx(1.0, rel=1e-13)

    @pytest.mark.parametrize("tau, f", [(1e-6, 1 / 3), (1.0, 1 / 3), (5.0, 0.5)])
    def test_ratio_vs_discrete(self, tau, f):
        depth = 10_000
        w = np.array(sch.reach_weights(depth, depth / tau).weights)
        n = f * depth
        h = np.zeros(depth)
        h[: int(n)] = 1.0
        h[int(n)] = n - int(n)
        oracle = (h @ w) / (f * w.sum())
        assert abs(sch.reach_ratio(tau, f) - oracle) < 1e-4
        assert abs(sch.reach_ratio_discrete(tau, f, depth) - oracle) < 1e-12

    def test_ratio_series_branch_is_continuous(self):
        lo, hi = sch.reach_ratio(1e-3 * (1 - 1e-9), 0.3), sch.reach_ratio(1e-3, 0.3)
        assert lo == pytest.approx(hi, rel=1e-10)

    @pytest.mark.parametrize("f", [0.0, -0.1, 1.5])
    def test_ratio_bad_fraction(self, f):
        with pytest.raises(InvalidArgument):
            sch.reach_ratio(1.0, f)

    def test_ratio_bad_tau(self):
        with pytest.raises(InvalidArgument):
            sch.reach_ratio(0.0, 0.5)


class TestKeepProb:
    def test_zero_field(self):
        assert sch.h_to_keep_prob(0.0, ChannelParams(2.0, 0.0, 1.0, "relu")) == 1.0

    def test_relu_exact(self):
        assert sch.h_to_keep_prob(0.1, ChannelParams(2.0, 0.0, 1.0, "relu")) == pytest.approx(0.9, abs=1e-12)

    def test_tanh_residual(self):
        sw = critical_sigma_w("tanh", 0.02)
        params = ChannelParams(sw, 0.02, 1.0, "tanh")
        rho = sch.h_to_keep_prob(0.01, params)
        assert 0.0 < rho < 1.0
        assert abs(dropout_field(params.replace(rho=rho)) - 0.01) < 1e-10

    def test_unreachable(self):
        with pytest.raises(UnreachableField):
            sch.h_to_keep_prob(1e6, ChannelParams(2.0, 0.0, 1.0, "relu"))

    def test_negative(self):
        with pytest.raises(InvalidArgument):
            sch.h_to_keep_prob(-0.1, ChannelParams(2.0, 0.0, 1.0, "relu"))

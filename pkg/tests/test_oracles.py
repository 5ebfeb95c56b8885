import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcvorder import oracles
from mcvorder.measures import EmpiricalMeasure, stop_loss
from mcvorder.oracles import (QuadratureRule, check_monotonicity_propagation, counterexample_derivative,
                              counterexample_factor, counterexample_fd_error, counterexample_sigma,
                              counterexample_sign_changes, expect_f_of_truncated,
                              finite_support_mcv_equivalence, normal_cdf, normal_pdf, normal_sf,
                              piecewise_linear_family, random_equivalence_trials, run_suite)


class TestQuadrature:
    def test_moments(self):
        m0, m1, m2 = QuadratureRule().moments()
        assert m0 == pytest.approx(1, abs=1e-12) and abs(m1) < 1e-12 and m2 == pytest.approx(1, abs=1e-12)

    @pytest.mark.parametrize("a", [0.5, 1.0, 2.0, 6.0])
    def test_lognormal_moment(self, a):
        # the exp(a z) phi(z) integrand peaks at z = a, so the domain follows it
        rule = QuadratureRule(-8.0, a + 8.0, 128)
        assert rule.expect(lambda z: np.exp(a * z)) == pytest.approx(math.exp(a * a / 2), rel=1e-12)

    def test_tails_via_erfc(self):
        assert normal_sf(-10.0) + normal_cdf(-10.0) == 1.0
        assert normal_cdf(-10.0) == pytest.approx(7.619853024160527e-24, rel=1e-12)
        assert normal_pdf(0.0) == pytest.approx(1 / math.sqrt(2 * math.pi))

    def test_breaks_align_panels(self):
        rule = QuadratureRule(-8, 8, 16, 8, breaks=(0.3,))
        assert rule.expect(lambda z: np.maximum(z - 0.3, 0)) == pytest.approx(
            normal_pdf(0.3) - 0.3 * normal_sf(0.3), abs=1e-13)


class TestTruncatedGaussian:
    def test_zero_scale(self):
        assert expect_f_of_truncated(0.0, 0.01, 1.0, np.exp) == pytest.approx(1.0, abs=1e-14)

    def test_identity_vanishes(self):
        assert abs(expect_f_of_truncated(2.3, 0.25, 1.0, lambda z: z)) < 1e-14

    def test_second_moment_closed_form(self):
        h, lip = 0.25, 1.0
        c = 1 / (2 * math.sqrt(h) * lip)
        expected = (2 * normal_cdf(c) - 1) - 2 * c * normal_pdf(c)
        assert expect_f_of_truncated(1.0, h, lip, lambda z: z * z) == pytest.approx(expected, rel=1e-12)

    def test_abs_monotone_in_u(self):
        us = np.linspace(0, 3, 50)
        vals = [expect_f_of_truncated(u, 0.01, 1.0, np.abs) for u in us]
        assert np.all(np.diff(vals) >= -1e-9)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0, 3), st.sampled_from(range(len(oracles.convex_catalog()))))
    def test_even_in_u(self, u, i):
        _, f = oracles.convex_catalog()[i]
        assert expect_f_of_truncated(u, 0.25, 1.0, f) == pytest.approx(
            expect_f_of_truncated(-u, 0.25, 1.0, f), abs=1e-12)

    def test_catalog_is_fixed(self):
        names = [n for n, _ in oracles.convex_catalog()]
        assert len(names) == 15 and oracles.CATALOG_VERSION == 1
        assert names[0] == "call(-2.0)" and names[-1] == "softplus(2)"


class TestCounterexample:
    def test_sigma_is_decreasing_positive(self):
        xs = np.linspace(-10, 10, 201)
        s = counterexample_sigma(xs)
        assert np.all(s > 0) and np.all(np.diff(s) < 0)
        # sigma(x) = E (Z - x)^+
        assert counterexample_sigma(0.3) == pytest.approx(
            QuadratureRule(breaks=(0.3,)).expect(lambda z: np.maximum(z - 0.3, 0)), abs=1e-13)

    def test_positive_at_eight(self):
        d = counterexample_derivative(8.0, 0.5)
        assert d > 0 and d == pytest.approx(math.exp(8), rel=1e-12)

    def test_negative_at_minus_ten(self):
        assert counterexample_derivative(-10.0, 0.5) < 0

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-12, 8), st.floats(0.05, 1.0))
    def test_matches_finite_differences(self, x, h):
        assert counterexample_fd_error(x, h) <= 1e-6

    def test_single_sign_change(self):
        changes, roots = counterexample_sign_changes(0.5)
        assert changes == 1
        assert abs(counterexample_factor(roots[0], 0.5)) <= 1e-8
        assert counterexample_derivative(roots[0] - 1e-3, 0.5) < 0 < counterexample_derivative(roots[0] + 1e-3, 0.5)


class TestPropagation:
    def test_nondecreasing_sigma_call(self):
        call = [f for f in oracles.convex_catalog() if f[0] == "call(+0.0)"]
        rep = check_monotonicity_propagation("nondecreasing", 0.5, functions=call)
        assert len(rep.grid) == 201 and rep.grid[0] == -5 and rep.grid[-1] == 5
        assert not rep.any_monotone_violation and not rep.any_convexity_violation

    def test_counterexample_detected(self):
        rep = check_monotonicity_propagation("decreasing_counterexample", 0.5, functions=[("exp", np.exp)])
        bad = rep.row("exp").monotone_violations
        assert bad and all(x < 0 for x in bad)
        assert any(x <= -5 for x in bad)

    def test_truncation_restores_monotonicity(self):
        rep = check_monotonicity_propagation("decreasing_counterexample", 0.5, functions=[("exp", np.exp)],
                                             truncated=True)
        assert not rep.any_monotone_violation

    def test_constant_sigma(self):
        assert not check_monotonicity_propagation("constant", 0.5, drift=0.3).any_monotone_violation

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            check_monotonicity_propagation("wiggly", 0.5)


class TestFiniteSupport:
    def test_family_size(self):
        # non-decreasing slope sequences of length 20 over {0..4}: C(24, 4)
        assert piecewise_linear_family().shape == (math.comb(24, 4), 21)

    def test_equal_measures(self):
        res = finite_support_mcv_equivalence([0, 2, 2], [2, 0, 2])
        assert res.agree and res.stop_loss_dominated and res.family_dominated

    def test_spread_dominates_point(self):
        res = finite_support_mcv_equivalence([0], [-1, 1])
        assert res.agree and res.stop_loss_dominated

    def test_larger_point_rejected(self):
        res = finite_support_mcv_equivalence([1], [0])
        assert res.agree and not res.stop_loss_dominated and not res.family_dominated

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(-10, 10), min_size=1, max_size=5), st.lists(st.integers(-10, 10), min_size=1,
                                                                           max_size=5))
    def test_stop_loss_side_matches_measures_module(self, mu, nu):
        # integer strikes suffice: stop-loss transforms of integer atoms are affine between integers
        a, b = EmpiricalMeasure(mu), EmpiricalMeasure(nu)
        direct = all(stop_loss(b, k) >= stop_loss(a, k) - 1e-12 for k in range(-10, 11))
        res = finite_support_mcv_equivalence(mu, nu)
        assert res.stop_loss_dominated == direct
        assert res.agree

    def test_random_trials_agree(self):
        agreements, dominated, trials = random_equivalence_trials(2000, seed=1)
        assert agreements == trials and 0 < dominated < trials

    def test_atom_validation(self):
        with pytest.raises(ValueError):
            finite_support_mcv_equivalence([], [0])
        with pytest.raises(ValueError):
            finite_support_mcv_equivalence([11], [0])
        with pytest.raises(ValueError):
            finite_support_mcv_equivalence([0] * 6, [0])


class TestReports:
    def test_csv_and_text(self, tmp_path):
        rep = run_suite("counterexample")
        assert rep.passed
        rep.to_csv(tmp_path / "r.csv")
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == "check,input,expected,observed,pass"
        assert len(lines) == len(rep.rows) + 1
        assert "checks passed" in rep.to_text()

    def test_unknown_suite(self):
        with pytest.raises(ValueError):
            run_suite("nope")

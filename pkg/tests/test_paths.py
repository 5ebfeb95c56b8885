import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcvorder.coefficients import gbm, zero_model
from mcvorder.measures import stop_loss
from mcvorder.paths import (Estimate, FunctionalSpec, GridPath, estimate_difference, estimate_functional,
                            functional_samples, gbm_call_square_closed_form, interpolate, marginal_at,
                            spot_check_composite, write_curve_csv)
from mcvorder.scheme import ParticleEnsemble, SchemeConfig, simulate


def ensemble(states, horizon=1.0):
    states = np.asarray(states, dtype=float)
    cfg = SchemeConfig(horizon=horizon, steps=states.shape[1] - 1, particles=states.shape[0])
    return ParticleEnsemble(states, cfg, "test")


class TestInterpolate:
    def test_knots(self):
        v = [0.0, 1.0, 4.0]
        assert [interpolate(v, t, 1.0) for t in (0.0, 0.5, 1.0)] == v

    def test_midpoint(self):
        assert interpolate([2.0, 6.0], 0.5, 1.0) == 4.0

    def test_hand_evaluated(self):
        # between t_1 = 0.5 and t_2 = 1: 2 * ((1 - 0.75) * 1 + (0.75 - 0.5) * 4)
        assert interpolate([0.0, 1.0, 4.0], 0.75, 1.0) == pytest.approx(2.5)

    def test_outside_horizon(self):
        with pytest.raises(ValueError):
            interpolate([0.0, 1.0], 1.5, 1.0)

    @settings(max_examples=60)
    @given(st.lists(st.floats(-100, 100), min_size=2, max_size=12), st.floats(0, 1))
    def test_between_neighbours(self, values, t):
        got = interpolate(values, t, 1.0)
        m = min(int(t * (len(values) - 1)), len(values) - 2)
        lo, hi = sorted(values[m:m + 2])
        assert lo - 1e-9 <= got <= hi + 1e-9

    def test_grid_path(self):
        p = GridPath(np.array([0.0, 3.0, 1.0]), 2.0)
        assert p(1.5) == pytest.approx(2.0)
        assert p.sup() == 3.0 and list(p.times) == [0.0, 1.0, 2.0]


class TestFunctionals:
    def test_terminal_value_of_constant_ensemble(self):
        cfg = SchemeConfig(steps=5, particles=50)
        ens = simulate(zero_model(), np.full(50, 2.5), cfg)
        est = estimate_functional(ens, FunctionalSpec("terminal_value"))
        assert est.value == 2.5 and est.stderr == 0.0

    def test_call_square_on_gbm(self):
        cfg = SchemeConfig(steps=100, particles=100_000, seed=21)
        ens = simulate(gbm(0.05, 1), np.ones(cfg.particles), cfg)
        f = FunctionalSpec("terminal_call_square")
        for t in (0.25, 0.5, 1.0):
            est = estimate_functional(ens, f, t)
            assert abs(est.value - math.exp(1.1 * t)) <= 3 * est.stderr

    def test_sup_dominates_terminal(self):
        cfg = SchemeConfig(steps=10, particles=500, seed=1)
        ens = simulate(gbm(0.05, 1), np.ones(500), cfg)
        for t in (0.0, 0.33, 1.0):
            sup = functional_samples(ens, FunctionalSpec("sup_path"), t)
            term = functional_samples(ens, FunctionalSpec("terminal_value"), t)
            assert np.all(sup >= term)

    def test_sup_includes_interpolated_endpoint(self):
        ens = ensemble([[0.0, 2.0, 0.0], [0.0, 2.0, 0.0]])
        assert functional_samples(ens, FunctionalSpec("sup_path"), 0.25)[0] == pytest.approx(1.0)
        assert functional_samples(ens, FunctionalSpec("sup_path"), 0.75)[0] == pytest.approx(2.0)

    def test_composite_with_law_terms(self):
        ens = ensemble([[0.0, 1.0], [0.0, 3.0]])
        f = FunctionalSpec("user_composite", "max(x - law_mean, 0) + law_stop_loss(2)")
        vals = functional_samples(ens, f, 1.0)
        sl = stop_loss(ens.marginals[1], 2.0)
        assert np.allclose(vals, [0.0 + sl, 1.0 + sl])

    def test_composite_law_at_intermediate_time_uses_mixture(self):
        ens = ensemble([[0.0, 2.0], [0.0, 4.0]])
        f = FunctionalSpec("user_composite", "law_mean")
        law = marginal_at(ens, 0.25)
        assert functional_samples(ens, f, 0.25)[0] == pytest.approx(law.mean()) == pytest.approx(0.75)

    def test_composite_names(self):
        with pytest.raises(ValueError):
            FunctionalSpec("user_composite", "x + nope")
        with pytest.raises(ValueError):
            FunctionalSpec("user_composite")
        with pytest.raises(ValueError):
            FunctionalSpec("bogus")

    def test_spot_check_warns_on_concave_composite(self):
        cfg = SchemeConfig(steps=4, particles=200, seed=3)
        ens = simulate(gbm(0.05, 1), np.ones(200), cfg)
        with pytest.warns(RuntimeWarning):
            assert spot_check_composite(FunctionalSpec("user_composite", "-x*x"), ens) > 0
        assert spot_check_composite(FunctionalSpec("user_composite", "max(x - 1, 0)"), ens) == 0


class TestEstimates:
    def test_paired_difference_of_identical_ensembles(self):
        cfg = SchemeConfig(steps=4, particles=100, seed=3)
        ens = simulate(gbm(0.05, 1), np.ones(100), cfg)
        d = estimate_difference(ens, ens, FunctionalSpec("terminal_call_square"))
        assert d.value == 0.0 and d.stderr == 0.0

    def test_ci(self):
        e = Estimate.from_samples([1.0, 2.0, 3.0, 4.0])
        lo, hi = e.ci95
        assert e.value == 2.5 and lo < 2.5 < hi
        assert e.stderr == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)

    def test_curve_csv(self, tmp_path):
        write_curve_csv(tmp_path / "c.csv", [0.0, 1.0], [Estimate(1.0, 0.0, 3), Estimate(2.0, 0.5, 3)])
        lines = (tmp_path / "c.csv").read_text().splitlines()
        assert lines[0] == "t,estimate,stderr,ci_lo,ci_hi"
        assert lines[1] == "0,1,0,1,1"


class TestClosedForm:
    @pytest.mark.parametrize("r,rate", [(0.05, 1.1), (0.15, 1.3)])
    def test_reference_curves(self, r, rate):
        for t in (0.0, 0.3, 1.0):
            assert gbm_call_square_closed_form(r, 1.0, 1.0, t) == pytest.approx(math.exp(rate * t))

    def test_deterministic_growth(self):
        assert gbm_call_square_closed_form(0.2, 0.0, 3.0, 0.5) == pytest.approx(9 * math.exp(0.2))

    def test_requires_positive_start(self):
        with pytest.raises(ValueError):
            gbm_call_square_closed_form(0.1, 1.0, 0.0, 1.0)

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import chain2_mixed
from oracles import bernstein, hoeffding
from opeval.data import collect
from opeval.errors import ArgumentError
from opeval.mdp import TabularPolicy, exact_policy_value
from opeval.ope import OpeInputs, confidence_interval, estimate_tis
from opeval.ope.confidence import analytic_j_max, hoeffding_radius


class TestFormulas:
    def test_hoeffding_constant(self):
        # sqrt(ln 20 / 200) evaluated by hand
        assert hoeffding_radius(100, 0.05, 1.0) == pytest.approx(0.12238734153404082, abs=1e-12)
        ci = confidence_interval(np.r_[np.ones(50), np.zeros(50)], "hoeffding", 0.05)
        assert ci.radius == pytest.approx(math.sqrt(math.log(20) / 200), abs=1e-12)

    def test_hoeffding_matches_oracle(self):
        v = np.random.default_rng(0).uniform(-2, 3, 37)
        ci = confidence_interval(v, "hoeffding", 0.1)
        assert ci.radius == pytest.approx(hoeffding(37, 0.1, np.abs(v).max()), rel=1e-12)
        assert ci.center == pytest.approx(v.mean(), abs=1e-15)

    def test_bernstein_matches_oracle(self):
        v = np.random.default_rng(1).uniform(0, 1, 60)
        ci = confidence_interval(v, "empirical_bernstein", 0.05)
        assert ci.radius == pytest.approx(bernstein(list(v), 0.05, v.max()), rel=1e-12)

    def test_ttest_constant_values(self):
        ci = confidence_interval(np.full(10, 2.5), "ttest")
        assert (ci.lower, ci.upper) == (2.5, 2.5)

    def test_ttest_quantile(self):
        v = np.array([1.0, 2.0, 3.0, 4.0])
        ci = confidence_interval(v, "ttest", 0.05)
        # one-sided 95% t quantile with 3 degrees of freedom
        assert ci.radius == pytest.approx(2.3533634348018264 * v.std(ddof=1) / 2, rel=1e-8)

    def test_bootstrap_deterministic_and_brackets_mean(self):
        v = np.random.default_rng(2).normal(size=200)
        a = confidence_interval(v, "bootstrap", 0.1, bootstrap_b=100, seed=4)
        b = confidence_interval(v, "bootstrap", 0.1, bootstrap_b=100, seed=4)
        assert a == b
        assert a.lower < v.mean() < a.upper

    def test_analytic_j_max(self, chain2, uniform2, matching):
        inp = OpeInputs(collect(chain2, uniform2, 20, 0), matching)
        assert analytic_j_max(inp, 1.0) == pytest.approx(2.0 * inp.cumulative_weights().max())
        ci = confidence_interval(np.zeros(5), "hoeffding", j_max_mode="analytic", j_max=4.0)
        assert ci.radius == pytest.approx(hoeffding(5, 0.05, 4.0))

    @pytest.mark.parametrize("kw", [dict(alpha=0.0), dict(alpha=1.0), dict(method="wald"),
                                    dict(j_max_mode="analytic"), dict(j_max_mode="guess")])
    def test_errors(self, kw):
        with pytest.raises(ArgumentError):
            confidence_interval(np.arange(5.0), **kw)

    def test_single_value_rejected(self):
        with pytest.raises(ArgumentError):
            confidence_interval([1.0], "ttest")


class TestProperties:
    @given(st.integers(0, 10 ** 6), st.integers(200, 2000))
    def test_bernstein_tighter_on_low_variance(self, seed, n):
        # tiny spread; n large enough that the 1/n Bernstein term is below the Hoeffding radius
        v = 0.5 + 1e-3 * np.random.default_rng(seed).normal(size=n)
        h = confidence_interval(v, "hoeffding", 0.05, "analytic", j_max=1.0)
        b = confidence_interval(v, "empirical_bernstein", 0.05, "analytic", j_max=1.0)
        assert b.radius <= h.radius

    @given(st.lists(st.floats(-100, 100), min_size=2, max_size=30),
           st.sampled_from(["hoeffding", "empirical_bernstein", "ttest", "bootstrap"]))
    def test_ordered_bounds(self, values, method):
        ci = confidence_interval(values, method)
        assert ci.lower <= ci.upper

    def test_hoeffding_coverage(self):
        mdp = chain2_mixed(horizon=2, discount=1.0)
        b = TabularPolicy.uniform(2, 2)
        pi = TabularPolicy(np.array([[0.7, 0.3], [0.4, 0.6]]), "pi")
        J = exact_policy_value(mdp, pi)
        hits = 0
        for r in range(500):
            v = estimate_tis(OpeInputs(collect(mdp, b, 200, r), pi)).per_trajectory_values
            ci = confidence_interval(v, "hoeffding", 0.05)
            hits += ci.lower <= J <= ci.upper
        assert hits >= 475

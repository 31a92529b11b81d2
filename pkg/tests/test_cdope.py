import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import noiseless, random_policy
from oracles import enumerate_paths, enumerated_return_cdf
from opeval.cdope import (
    CDF_ESTIMATORS,
    CdfEstimate,
    RewardGrid,
    cdf_cvar,
    cdf_interquartile,
    cdf_mean_variance,
    cdf_quantile,
    estimate_cdf,
    fit_cdf_reward_model,
    monotone_correct,
    oracle_cdf_reward_model,
    true_cdf,
)
from opeval.data import collect
from opeval.errors import ArgumentError, ConfigurationError, ContractError
from opeval.mdp import TabularPolicy, make_chain2, make_random_mdp
from opeval.ope import OpeInputs, estimate_tis

GRID = RewardGrid()          # 0..10 in 20 cells
CHAIN_GRID = RewardGrid(0.0, 2.0, 8)


def from_atoms(support, probs, grid=GRID):
    F = np.array([sum(p for g, p in zip(support, probs) if g <= m + 1e-12) for m in grid.thresholds])
    return CdfEstimate(grid, np.minimum(F, 1.0), "test", True)


def exact_quantile(support, probs, alpha):
    cum = np.cumsum(probs)
    return support[int(np.flatnonzero(cum >= alpha - 1e-12)[0])]


class TestMonotoneCorrect:
    def test_tis_rule(self):
        assert np.array_equal(monotone_correct([0.1, 0.05, 0.3, 1.2], "tis"), [0.1, 0.1, 0.3, 1.0])

    def test_tdr_lower_clip(self):
        assert np.array_equal(monotone_correct([-0.2, 0.1], "tdr"), [0.0, 0.1])

    def test_valid_cdf_unchanged(self):
        F = np.array([0.0, 0.2, 0.2, 0.7, 1.0])
        for kind in CDF_ESTIMATORS:
            assert np.array_equal(monotone_correct(F, kind), F)

    @given(st.lists(st.floats(-3, 3), min_size=1, max_size=25), st.sampled_from(CDF_ESTIMATORS))
    def test_idempotent(self, raw, kind):
        once = monotone_correct(raw, kind)
        assert np.array_equal(monotone_correct(once, kind), once)
        assert (np.diff(once) >= 0).all() and once.max() <= 1.0

    def test_unknown_kind(self):
        with pytest.raises(ArgumentError):
            monotone_correct([0.1], "qr")


class TestEstimateCdf:
    def test_identity_tis_is_empirical_cdf(self):
        mdp = noiseless(make_random_mdp(4, 2, 5, 0.9, seed=3))
        b = random_policy(np.random.default_rng(0), 4, 2)
        ds = collect(mdp, b, 300, 1)
        grid = RewardGrid(0.0, 5.0, 20)
        cdf = estimate_cdf(OpeInputs(ds, b), grid, "tis")
        emp = (ds.returns[:, None] <= grid.thresholds).mean(axis=0)
        assert np.abs(cdf.values - emp).max() <= 1e-12

    @pytest.mark.parametrize("est", CDF_ESTIMATORS)
    def test_point_mass(self, chain2, matching, est):
        ds = collect(chain2, matching, 50, 0)
        model = oracle_cdf_reward_model(chain2, matching, GRID)
        cdf = estimate_cdf(OpeInputs(ds, matching), GRID, est, model)
        assert np.array_equal(cdf.values, (GRID.thresholds >= 2.0).astype(float))

    def test_chain2_tis_matches_enumeration(self, chain2, uniform2):
        pi = TabularPolicy(np.array([[0.7, 0.3], [0.2, 0.8]]), "pi")
        ds = collect(chain2, uniform2, 100_000, 2)
        cdf = estimate_cdf(OpeInputs(ds, pi), CHAIN_GRID, "tis")
        exact = enumerated_return_cdf(chain2, pi, CHAIN_GRID.thresholds)
        assert np.abs(cdf.values - exact).max() <= 0.02

    def test_chain2_matching_tis(self, chain2, uniform2, matching):
        ds = collect(chain2, uniform2, 100_000, 3)
        cdf = estimate_cdf(OpeInputs(ds, matching), CHAIN_GRID, "tis")
        exact = enumerated_return_cdf(chain2, matching, CHAIN_GRID.thresholds)
        assert np.abs(cdf.values - exact).max() <= 0.02

    def test_dm_with_oracle_model_is_exact(self, chain2, uniform2):
        pi = TabularPolicy(np.array([[0.6, 0.4], [0.1, 0.9]]), "pi")
        model = oracle_cdf_reward_model(chain2, pi, CHAIN_GRID)
        cdf = estimate_cdf(OpeInputs(collect(chain2, uniform2, 20, 0), pi), CHAIN_GRID, "dm", model)
        exact = enumerated_return_cdf(chain2, pi, CHAIN_GRID.thresholds)
        assert np.abs(cdf.values - exact).max() <= 1e-12

    def test_true_cdf_matches_enumeration(self):
        mdp = noiseless(make_random_mdp(3, 2, 4, 0.9, seed=4))
        pi = random_policy(np.random.default_rng(1), 3, 2)
        grid = RewardGrid(0.0, 4.0, 40)
        assert np.abs(true_cdf(mdp, pi, grid).values - enumerated_return_cdf(mdp, pi, grid.thresholds)).max() <= 1e-12

    @given(st.integers(0, 10 ** 6), st.sampled_from(CDF_ESTIMATORS))
    def test_corrected_is_valid_cdf(self, seed, est):
        rng = np.random.default_rng(seed)
        mdp = noiseless(make_random_mdp(3, 2, 4, 0.9, seed))
        b, pi = random_policy(rng, 3, 2), random_policy(rng, 3, 2)
        ds = collect(mdp, b, 40, seed)
        grid = RewardGrid(0.0, 4.0, 16)
        cdf = estimate_cdf(OpeInputs(ds, pi), grid, est, fit_cdf_reward_model(ds, pi, grid))
        assert (np.diff(cdf.values) >= 0).all()
        assert cdf.values.min() >= 0.0 and cdf.values.max() <= 1.0
        assert cdf.values[-1] == 1.0

    @given(st.integers(0, 10 ** 6))
    def test_sn_tis_raw_never_exceeds_one(self, seed):
        rng = np.random.default_rng(seed)
        mdp = noiseless(make_random_mdp(3, 2, 4, 0.9, seed))
        b, pi = random_policy(rng, 3, 2), random_policy(rng, 3, 2, floor=0.0)
        ds = collect(mdp, b, 25, seed)
        assert estimate_cdf(OpeInputs(ds, pi), RewardGrid(0.0, 4.0, 16), "sn_tis").raw_values.max() <= 1.0

    def test_grid_overflow_warns(self, chain2, matching):
        cdf = estimate_cdf(OpeInputs(collect(chain2, matching, 5, 0), matching), RewardGrid(0.0, 1.0, 4), "tis")
        assert cdf.warnings and cdf.values[-1] == 0.0

    def test_missing_model(self, chain2, uniform2):
        inp = OpeInputs(collect(chain2, uniform2, 5, 0), uniform2)
        for est in ("dm", "tdr", "sn_tdr"):
            with pytest.raises(ConfigurationError):
                estimate_cdf(inp, GRID, est)

    def test_unknown_estimator(self, chain2, uniform2):
        with pytest.raises(ArgumentError):
            estimate_cdf(OpeInputs(collect(chain2, uniform2, 5, 0), uniform2), GRID, "quantile")

    def test_mean_agrees_with_tis(self):
        mdp = noiseless(make_random_mdp(4, 2, 5, 0.9, seed=8))
        rng = np.random.default_rng(2)
        b, pi = random_policy(rng, 4, 2), random_policy(rng, 4, 2)
        grid = RewardGrid(0.0, 5.0, 20)
        inp = OpeInputs(collect(mdp, b, 5000, 4), pi)
        tis = estimate_tis(inp)
        se = tis.per_trajectory_values.std(ddof=1) / np.sqrt(inp.n)
        mean, _ = cdf_mean_variance(estimate_cdf(inp, grid, "tis"))
        assert abs(mean - tis.value) <= grid.step + 3 * se


class TestRewardModel:
    def test_fitted_model_near_oracle(self, chain2, uniform2):
        pi = TabularPolicy(np.array([[0.6, 0.4], [0.1, 0.9]]), "pi")
        ds = collect(chain2, uniform2, 100_000, 5)
        fitted = fit_cdf_reward_model(ds, pi, CHAIN_GRID)
        oracle = oracle_cdf_reward_model(chain2, pi, CHAIN_GRID)
        assert np.abs(fitted.cdf[0] - oracle.cdf[0]).max() <= 0.02

    def test_unvisited_group_is_smoothed_uniform(self, chain2, uniform2):
        fitted = fit_cdf_reward_model(collect(chain2, uniform2, 10, 0), uniform2, CHAIN_GRID)
        # state 1 never starts an episode
        assert np.allclose(fitted.cdf[1, 0], np.arange(1, 10) / 9)

    def test_top_pinned_without_overflow(self, chain2, uniform2):
        fitted = fit_cdf_reward_model(collect(chain2, uniform2, 50, 0), uniform2, CHAIN_GRID)
        assert (fitted.cdf[..., -1] == 1.0).all()


class TestRiskFunctionals:
    def test_point_mass(self):
        cdf = from_atoms([3.0], [1.0])
        assert cdf_mean_variance(cdf)[1] == 0.0
        assert abs(cdf_mean_variance(cdf)[0] - 3.0) <= GRID.step
        assert cdf_quantile(cdf, 0.3) == 3.0
        assert cdf_interquartile(cdf, 0.25) == (3.0, 3.0, 3.0)
        assert abs(cdf_cvar(cdf, 0.4) - 3.0) <= GRID.step

    def test_point_mass_exact_at_zero(self):
        cdf = from_atoms([0.0], [1.0])
        assert cdf_mean_variance(cdf) == (0.0, 0.0)
        assert cdf_cvar(cdf, 0.5) == 0.0

    def test_two_equal_atoms(self):
        mean, var = cdf_mean_variance(from_atoms([0.0, 10.0], [0.5, 0.5]))
        assert abs(mean - 5.0) <= GRID.step
        # atoms may each move by one cell: spread in [(10 - step) / 2, (10 + step) / 2]
        assert ((10 - GRID.step) / 2) ** 2 <= var <= ((10 + GRID.step) / 2) ** 2

    def test_identity_mean_close_to_sample_mean(self):
        mdp = noiseless(make_random_mdp(4, 2, 5, 0.9, seed=3))
        b = random_policy(np.random.default_rng(0), 4, 2)
        ds = collect(mdp, b, 500, 1)
        grid = RewardGrid(0.0, 5.0, 20)
        mean, _ = cdf_mean_variance(estimate_cdf(OpeInputs(ds, b), grid, "tis"))
        assert abs(mean - ds.returns.mean()) <= grid.step

    def test_uniform_median(self):
        m = GRID.thresholds
        cdf = from_atoms(m, np.full(m.size, 1 / m.size))
        assert abs(cdf_quantile(cdf, 0.5) - 5.0) <= GRID.step

    def test_high_alpha_bounded(self):
        cdf = from_atoms([1.0, 12.0], [0.5, 0.5])
        assert cdf_quantile(cdf, 0.999) == GRID.scale_max

    def test_cvar_whole_distribution_is_mean(self):
        cdf = from_atoms([1.0, 4.0, 7.5], [0.2, 0.5, 0.3])
        assert cdf_cvar(cdf, 1.0) == pytest.approx(cdf_mean_variance(cdf)[0], abs=1e-10)
        overflow = from_atoms([1.0, 12.0], [0.5, 0.5])
        assert cdf_cvar(overflow, 1.0) == pytest.approx(cdf_mean_variance(overflow)[0], abs=1e-10)

    def test_cvar_two_point(self):
        cdf = from_atoms([0.0, 10.0], [0.3, 0.7])
        assert abs(cdf_cvar(cdf, 0.3) - 0.0) <= GRID.step

    def test_cvar_unnormalized_scale(self):
        cdf = from_atoms([2.0, 6.0], [0.4, 0.6])
        assert cdf_cvar(cdf, 0.4, normalized=False) == pytest.approx(0.4 * cdf_cvar(cdf, 0.4), abs=1e-12)

    def test_symmetric_interquartile(self):
        lo, med, hi = cdf_interquartile(from_atoms([2.0, 8.0], [0.5, 0.5]), 0.25)
        assert lo == 2.0 and hi == 8.0 and med in (2.0, 8.0)

    def test_chain2_interquartile_brackets_exact(self):
        mdp = make_chain2(horizon=4, discount=0.9)
        pi = TabularPolicy(np.array([[0.6, 0.4], [0.3, 0.7]]), "pi")
        grid = RewardGrid(0.0, 4.0, 40)
        prob, ret = enumerate_paths(mdp.transition, mdp.reward_mean, mdp.initial_dist, pi.probs, 4, 0.9)
        order = np.argsort(ret)
        support, probs = ret[order], prob[order]
        lo, _, hi = cdf_interquartile(true_cdf(mdp, pi, grid), 0.3)
        assert abs(lo - exact_quantile(support, probs, 0.3)) <= grid.step
        assert abs(hi - exact_quantile(support, probs, 0.7)) <= grid.step

    def test_uncorrected_rejected(self):
        raw = CdfEstimate(GRID, np.linspace(0, 1, 21), "raw", False)
        with pytest.raises(ContractError):
            cdf_mean_variance(raw)
        with pytest.raises(ContractError):
            cdf_quantile(raw, 0.5)

    @pytest.mark.parametrize("alpha", [0.0, 1.0, 1.5])
    def test_quantile_alpha_range(self, alpha):
        with pytest.raises(ArgumentError):
            cdf_quantile(from_atoms([1.0], [1.0]), alpha)

    def test_interquartile_alpha_range(self):
        with pytest.raises(ArgumentError):
            cdf_interquartile(from_atoms([1.0], [1.0]), 0.5)

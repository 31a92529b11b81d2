import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import noiseless, random_policy
from opeval.data import collect
from opeval.errors import ArgumentError, SupportError
from opeval.fitting import (
    AlmHyperparams,
    FittedQ,
    alm_gradients,
    alm_objective,
    empirical_marginal_weights,
    fit_alm,
    fit_fqe,
    fit_minimax_kernel,
    oracle_marginal_weights,
    preset,
)
from opeval.fitting._tuples import build_tuples
from opeval.fitting.minimax import _Problem, mql_objective
from opeval.mdp import MdpSpec, TabularPolicy, exact_occupancy, exact_policy_value, exact_q_function, make_chain2, \
    make_random_mdp


class TestFqe:
    def test_exact_on_chain2(self, chain2, matching, uniform2):
        ds = collect(chain2, uniform2, 200, 0)
        fq = fit_fqe(ds, matching)
        assert np.array_equal(fq.q, exact_q_function(chain2, matching))

    def test_zero_rewards(self):
        mdp = make_random_mdp(3, 2, 4, 0.9, seed=0).with_rewards(np.zeros((3, 2)))
        ds = collect(mdp, TabularPolicy.uniform(3, 2), 50, 1)
        assert not fit_fqe(ds, TabularPolicy.uniform(3, 2)).q.any()

    def test_unvisited_pair_is_zero(self, chain2):
        only0 = TabularPolicy.deterministic([0, 0], 2)
        ds = collect(chain2, only0, 10, 0)
        fq = fit_fqe(ds, TabularPolicy.uniform(2, 2))
        assert (fq.q[:, :, 1] == 0).all() and (fq.q[:, 1, :] == 0).all()
        assert fq.q[0, 0, 0] > 0

    def test_stationary_mode(self):
        mdp = make_chain2(horizon=30, discount=0.9)
        pi = TabularPolicy.uniform(2, 2)
        fq = fit_fqe(collect(mdp, pi, 50, 0), pi, time_dependent=False)
        assert np.abs(fq.q - exact_q_function(mdp, pi, time_dependent=False)).max() < 1e-9
        assert fq.fit_log["residual"] < 1e-10

    def test_stationary_needs_discount_below_one(self, chain2, uniform2):
        with pytest.raises(ArgumentError):
            fit_fqe(collect(chain2, uniform2, 5, 0), uniform2, time_dependent=False)

    def test_on_policy_consistency(self, small_random):
        pi = random_policy(np.random.default_rng(1), 3, 2)
        ds = collect(small_random, pi, 10_000, 3)
        q0 = fit_fqe(ds, pi).q[0]
        v0 = (pi.probs * q0).sum(axis=1)[ds.initial_state]
        se = ds.returns.std(ddof=1) / np.sqrt(ds.n_trajectories)
        assert abs(v0.mean() - exact_policy_value(small_random, pi)) <= 3 * se

    def test_round_trip(self):
        fq = FittedQ(np.arange(12.0).reshape(2, 3, 2), {"a": 1})
        back = FittedQ.from_dict(fq.to_dict())
        assert np.array_equal(back.q, fq.q) and back.fit_log == {"a": 1}

    def test_stacked_pads_terminal_zero(self):
        fq = FittedQ(np.ones((3, 2, 2)))
        assert fq.stacked(3).shape == (4, 2, 2) and not fq.stacked(3)[3].any()
        with pytest.raises(ArgumentError):
            fq.stacked(4)


class TestOracleWeights:
    def test_identity_when_eval_is_behavior(self):
        mdp = make_random_mdp(4, 3, 5, 0.9, seed=2)
        pi = random_policy(np.random.default_rng(0), 4, 3)
        w = oracle_marginal_weights(mdp, pi, pi)
        d_s, d_sa = exact_occupancy(mdp, pi)
        assert np.abs(w.rho_state[d_s > 0] - 1).max() <= 1e-12
        assert np.abs(w.rho_state_action[d_sa > 0] - 1).max() <= 1e-12

    def test_chain2_matching_over_uniform(self, chain2, matching, uniform2):
        # uniform occupancy at (0, 0) is (1/2 + 1/4) / 2 = 3/8, matching puts all mass there
        w = oracle_marginal_weights(chain2, matching, uniform2)
        assert w.rho_state_action == pytest.approx(np.array([[8 / 3, 0], [0, 0]]), abs=1e-14)
        assert w.rho_state == pytest.approx([4 / 3, 0], abs=1e-14)

    def test_reward_scaling_leaves_weights(self):
        mdp = make_random_mdp(3, 2, 4, 0.9, seed=5)
        pi, b = random_policy(np.random.default_rng(1), 3, 2), random_policy(np.random.default_rng(2), 3, 2)
        scaled = mdp.with_rewards(3 * mdp.reward_mean, (0.0, 3.0))
        a, c = oracle_marginal_weights(mdp, pi, b), oracle_marginal_weights(scaled, pi, b)
        assert np.array_equal(a.rho_state_action, c.rho_state_action)

    def test_missing_support(self, chain2, uniform2):
        only0 = TabularPolicy.deterministic([0, 0], 2)
        with pytest.raises(SupportError):
            oracle_marginal_weights(chain2, uniform2, only0)

    @given(st.integers(0, 10 ** 6))
    def test_invariants(self, seed):
        rng = np.random.default_rng(seed)
        mdp = make_random_mdp(4, 3, 5, 0.9, seed)
        pi, b = random_policy(rng, 4, 3), random_policy(rng, 4, 3)
        w = oracle_marginal_weights(mdp, pi, b)
        _, d_b_sa = exact_occupancy(mdp, b)
        assert abs((d_b_sa * w.rho_state_action).sum() - 1) <= 1e-10
        expected = w.rho_state[:, None] * pi.probs / b.probs
        assert np.abs(w.rho_state_action - expected).max() <= 1e-10


class TestEmpiricalWeights:
    def test_identity_at_large_n(self):
        mdp = make_random_mdp(4, 2, 5, 0.9, seed=3)
        b = TabularPolicy.uniform(4, 2)
        ds = collect(mdp, b, 100_000, 0)
        w = empirical_marginal_weights(ds, b, mdp)
        visits = np.bincount(ds.state.ravel(), minlength=4)
        assert np.abs(w.rho_state[visits >= 100] - 1).max() <= 0.05

    def test_concentrated_state(self):
        P = np.zeros((2, 2, 2))
        P[:, :, 0] = 1.0
        mdp = MdpSpec(P, np.zeros((2, 2)), [1.0, 0.0], 3, 0.9)
        pi = TabularPolicy.uniform(2, 2)
        w = empirical_marginal_weights(collect(mdp, pi, 1000, 0), pi, mdp)
        d_pi, _ = exact_occupancy(mdp, pi)
        assert w.rho_state[0] == pytest.approx(d_pi[0], abs=1e-3)
        assert np.isfinite(w.rho_state).all()

    def test_rate(self):
        # the error decays like n^{-1/2}: quadrupling n roughly halves it
        mdp = make_random_mdp(4, 2, 5, 0.9, seed=3)
        pi, b = random_policy(np.random.default_rng(4), 4, 2), TabularPolicy.uniform(4, 2)
        oracle = oracle_marginal_weights(mdp, pi, b).rho_state_action

        def mad(n):
            errs = [np.abs(empirical_marginal_weights(collect(mdp, b, n, s), pi, mdp).rho_state_action
                           - oracle).mean() for s in range(40)]
            return np.mean(errs)

        ratio = mad(500) / mad(2000)
        assert 1.6 <= ratio <= 2.5


class TestAlm:
    ROWS = {
        "BestDICE": (1.0, 0.0, 1, "optimize"),
        "DualDICE": (0.0, 1.0, 0, 0.0),
        "GenDICE": (0.0, 1.0, 0, "optimize"),
        "GradientDICE": (0.0, 1.0, 0, "optimize"),
        "AlgaeDICE": (1.0, 0.0, 1, 0.0),
        "MQL/MWL": (0.0, 0.0, 0, 0.0),
    }

    @pytest.mark.parametrize("name", sorted(ROWS))
    def test_preset_rows(self, name):
        assert preset(name).table_row() == self.ROWS[name]

    def test_unknown_preset(self):
        with pytest.raises(ArgumentError):
            preset("FooDICE")

    def test_default_optimizer_settings(self):
        hp = AlmHyperparams()
        assert (hp.lr_w, hp.lr_q, hp.lr_lambda, hp.max_iters, hp.tolerance) == (0.05, 0.05, 0.01, 20_000, 1e-5)

    def test_zero_iterations_returns_init(self):
        mdp = make_chain2(discount=0.9)
        pi = TabularPolicy.uniform(2, 2)
        w, q, lam = fit_alm(collect(mdp, pi, 100, 0), pi, preset("BestDICE", max_iters=0))
        assert (w.rho_state_action == 1).all() and not q.q.any() and lam == 0.0

    def test_chain2_recovers_identity(self):
        mdp = make_chain2(discount=0.9)
        b = TabularPolicy.uniform(2, 2)
        w, _, _ = fit_alm(collect(mdp, b, 10_000, 1), b, preset("BestDICE"))
        assert np.abs(w.rho_state_action - 1).max() <= 0.1

    def test_discount_one_rejected(self, chain2, uniform2):
        with pytest.raises(ArgumentError):
            fit_alm(collect(chain2, uniform2, 10, 0), uniform2, preset("BestDICE"))

    @pytest.mark.parametrize("name", ["BestDICE", "DualDICE", "AlgaeDICE"])
    def test_gradients_match_finite_differences(self, name):
        mdp = make_random_mdp(3, 2, 4, 0.9, seed=8)
        pi = random_policy(np.random.default_rng(0), 3, 2)
        tup = build_tuples(collect(mdp, TabularPolicy.uniform(3, 2), 30, 0), pi)
        hp = preset(name)
        rng = np.random.default_rng(1)
        h = 1e-5
        for _ in range(10):
            w, Q, lam = rng.uniform(0, 2, 6), rng.normal(size=6), float(rng.normal())
            g_w, g_q, g_lam = alm_gradients(tup, hp, w, Q, lam, pi.probs)
            fd_w = [(alm_objective(tup, hp, w + h * e, Q, lam) - alm_objective(tup, hp, w - h * e, Q, lam)) / (2 * h)
                    for e in np.eye(6)]
            fd_q = [(alm_objective(tup, hp, w, Q + h * e, lam) - alm_objective(tup, hp, w, Q - h * e, lam)) / (2 * h)
                    for e in np.eye(6)]
            fd_l = (alm_objective(tup, hp, w, Q, lam + h) - alm_objective(tup, hp, w, Q, lam - h)) / (2 * h)
            analytic = np.concatenate([g_w, g_q, [g_lam]])
            numeric = np.concatenate([fd_w, fd_q, [fd_l]])
            assert np.abs(analytic - numeric).max() <= 1e-4 * max(1.0, np.abs(numeric).max())

    def test_bad_hyperparams(self):
        with pytest.raises(ArgumentError):
            AlmHyperparams(alpha_r=2)
        with pytest.raises(ArgumentError):
            AlmHyperparams(lambda_mode="sometimes")


class TestMinimax:
    def test_mql_recovers_stationary_q(self):
        mdp = make_chain2(horizon=20, discount=0.9)
        pi = TabularPolicy.uniform(2, 2)
        fq = fit_minimax_kernel(collect(mdp, pi, 100, 1), pi, "value")
        assert np.abs(fq.q - exact_q_function(mdp, pi, time_dependent=False)).max() <= 0.05

    def test_mwl_identity(self):
        mdp = make_random_mdp(3, 2, 10, 0.9, seed=1)
        b = TabularPolicy.uniform(3, 2)
        ds = collect(mdp, b, 400, 2)
        w = fit_minimax_kernel(ds, b, "weight")
        counts = np.bincount(ds.state.ravel() * 2 + ds.action.ravel(), minlength=6).reshape(3, 2)
        assert np.abs(w.rho_state_action[counts >= 200] - 1).max() <= 0.1

    def test_saturated_kernel_keeps_zero_residual_optimum(self):
        mdp = make_chain2(horizon=20, discount=0.9)
        pi = TabularPolicy.uniform(2, 2)
        ds = collect(mdp, pi, 100, 1)
        q_star = exact_q_function(mdp, pi, time_dependent=False).ravel()
        tup = build_tuples(ds, pi, "continuing")
        for h in (1.0, 1e3):
            prob = _Problem(tup, h)
            assert abs(mql_objective(prob, q_star)) <= 1e-12
            assert mql_objective(prob, q_star + 0.5) != mql_objective(_Problem(tup, 1.0 if h > 1 else 1e3), q_star + 0.5)

    def test_tuple_budget(self, uniform2):
        mdp = make_chain2(horizon=10, discount=0.9)
        with pytest.raises(ArgumentError, match="subsample"):
            fit_minimax_kernel(collect(mdp, uniform2, 501, 0), uniform2, "weight")

    def test_bad_mode(self, uniform2):
        mdp = make_chain2(discount=0.9)
        with pytest.raises(ArgumentError):
            fit_minimax_kernel(collect(mdp, uniform2, 5, 0), uniform2, "both")

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import enumerate_paths, spearman_shortcut
from opeval.errors import ArgumentError, ConfigurationError, PanelError
from opeval.mdp import MdpSpec, TabularPolicy
from opeval.ops import (
    PolicyPanel,
    aggregate,
    metric_error_rates,
    metric_mse,
    metric_rank_correlation,
    metric_regret_at_k,
    panel_metrics,
    rank_order,
    select_by,
    topk_statistics,
)


def panel(truth, est, behavior=0.0, names=None, rel=1.0):
    names = names or [f"p{i}" for i in range(len(truth))]
    return PolicyPanel.from_values(names, truth, {"E": est, "oracle": truth}, behavior, rel)


value_lists = st.lists(st.floats(-50, 50, allow_nan=False), min_size=2, max_size=8)


@st.composite
def panels(draw):
    truth = draw(value_lists)
    est = draw(st.lists(st.floats(-50, 50, allow_nan=False), min_size=len(truth), max_size=len(truth)))
    return panel(truth, est, draw(st.floats(-50, 50)))


class TestConventional:
    def test_mse_examples(self):
        assert metric_mse(panel([1, 2, 3], [1, 2, 3]), "E") == 0.0
        assert metric_mse(panel([1, 2, 3], [1.5, 2.5, 3.5]), "E") == pytest.approx(0.25, abs=1e-15)
        assert metric_mse(panel([1, 2, 3], [1.5, 2, 2]), "E") == pytest.approx(1.25 / 3, abs=1e-15)

    def test_rank_correlation_examples(self):
        assert metric_rank_correlation(panel([1, 2, 3, 4], [10, 20, 30, 40]), "E") == pytest.approx(1.0)
        assert metric_rank_correlation(panel([1, 2, 3, 4], [4, 3, 2, 1]), "E") == pytest.approx(-1.0)
        assert metric_rank_correlation(panel([1, 2, 3, 4], [2, 1, 3, 4]), "E") == pytest.approx(0.8, abs=1e-12)

    def test_rank_correlation_undefined(self):
        assert metric_rank_correlation(panel([1, 2, 3], [5, 5, 5]), "E") is None

    @given(st.permutations(range(6)))
    def test_spearman_matches_shortcut(self, perm):
        truth = np.arange(6.0)
        got = metric_rank_correlation(panel(truth, np.array(perm, dtype=float)), "E")
        assert got == pytest.approx(spearman_shortcut(list(range(1, 7)), [p + 1 for p in perm]), abs=1e-12)

    def test_regret_examples(self):
        p = panel([3, 2, 1], [1, 2, 3])
        assert metric_regret_at_k(p, "E", 1) == 2.0
        assert metric_regret_at_k(p, "E", 3) == 0.0
        assert metric_regret_at_k(panel([3, 2, 1], [9, 0, 0]), "E", 1) == 0.0

    @pytest.mark.parametrize("k", [0, 4])
    def test_regret_k_range(self, k):
        with pytest.raises(ArgumentError):
            metric_regret_at_k(panel([3, 2, 1], [1, 2, 3]), "E", k)

    def test_error_rates(self):
        assert metric_error_rates(panel([5, 1], [1, 5], behavior=3), "E") == (1.0, 1.0)
        assert metric_error_rates(panel([5, 1], [5, 1], behavior=3), "E") == (0.0, 0.0)
        t1, t2 = metric_error_rates(panel([5, 4], [1, 5], behavior=3), "E")
        assert t1 is None and t2 == 0.5

    def test_relative_safety_threshold(self):
        p = panel([5, 1], [5, 1], behavior=4, rel=0.5)
        assert p.safety_threshold() == 2.0

    def test_missing_estimator(self):
        with pytest.raises(PanelError):
            metric_mse(panel([1, 2], [1, 2]), "nope")

    def test_panel_validation(self):
        with pytest.raises(ArgumentError):
            panel([1], [1])
        with pytest.raises(PanelError):
            PolicyPanel.from_values(["a", "b"], [1, 2], {"E": [1, 2, 3]}, 0.0)
        with pytest.raises(ArgumentError):
            PolicyPanel.from_values(["a", "a"], [1, 2], {"E": [1, 2]}, 0.0)

    def test_panel_metrics_row(self):
        row = panel_metrics(panel([3, 2, 1], [1, 2, 3], behavior=2), "E")
        assert row["regret_at_1"] == 2.0 and row["rank_correlation"] == pytest.approx(-1.0)
        assert set(row) == {"estimator", "target", "mse", "rank_correlation", "regret_at_1",
                            "type1_error", "type2_error"}


class TestTopk:
    def test_full_portfolio(self):
        p = panel([4, 9, 1, 6], [0, 0, 5, 1], behavior=5)
        rep = topk_statistics(p, "E")
        assert rep.best[-1] == 9 and rep.worst[-1] == 1
        assert rep.safety_violation_rate[-1] == 0.5

    def test_sharpe_example(self):
        p = panel([10, 8, 3], [3, 2, 1], behavior=8)
        rep = topk_statistics(p, "E")
        assert rep.best[1] == 10 and rep.std[1] == 1.0
        assert rep.sharpe_ratio[1] == 2.0
        assert rep.sharpe_ratio[0] is None

    def test_perfect_estimator_running_max(self):
        truth = [3.0, 7.0, 1.0, 5.0]
        rep = topk_statistics(panel(truth, truth), "oracle")
        assert list(rep.best) == [7.0] * 4
        assert list(rep.worst) == [7.0, 5.0, 3.0, 1.0]

    def test_population_std(self):
        rep = topk_statistics(panel([1.0, 2.0, 4.0], [3, 2, 1]), "E")
        assert rep.std[2] == pytest.approx(np.std([1.0, 2.0, 4.0]), abs=1e-15)

    def test_rows_serialize_none(self):
        rows = topk_statistics(panel([1.0, 2.0], [1, 2]), "E").rows()
        assert rows[0]["sharpe_ratio"] is None and rows[1]["k"] == 2

    @given(panels())
    def test_monotone_in_k(self, p):
        rep = topk_statistics(p, "E")
        assert (np.diff(rep.best) >= 0).all()
        assert (np.diff(rep.worst) <= 0).all()
        assert ((rep.worst <= rep.mean + 1e-12) & (rep.mean <= rep.best + 1e-12)).all()

    @given(panels())
    def test_regret_nonincreasing(self, p):
        regrets = [metric_regret_at_k(p, "E", k) for k in range(1, p.n_policies + 1)]
        assert all(r >= 0 for r in regrets)
        assert (np.diff(regrets) <= 0).all() and regrets[-1] == 0.0

    @given(value_lists)
    def test_oracle_estimator(self, truth):
        p = panel(truth, truth)
        assert metric_mse(p, "oracle") == 0.0
        assert all(metric_regret_at_k(p, "oracle", k) == 0.0 for k in range(1, len(truth) + 1))
        rc = metric_rank_correlation(p, "oracle")
        assert rc is None or rc == pytest.approx(1.0)


class TestSelection:
    def test_perfect_estimator_ranking(self):
        sel = select_by(panel([2.0, 5.0, 3.0], [2.0, 5.0, 3.0]), "E")
        assert sel.ranking == ("p1", "p2", "p0")
        assert sel.true == (5.0, 3.0, 2.0)

    def test_ties_by_name(self):
        sel = select_by(panel([1, 2, 3], [1.0, 1.0, 0.0], names=["zeta", "alpha", "mid"]), "E")
        assert sel.ranking == ("alpha", "zeta", "mid")

    def test_missing_criterion(self):
        with pytest.raises(ConfigurationError):
            select_by(panel([1, 2], [1, 2]), "E", "cvar")

    @given(value_lists, st.sampled_from(["exp", "cube", "affine"]))
    def test_invariant_to_increasing_transform(self, est, kind):
        names = [f"p{i}" for i in range(len(est))]
        x = np.array(est)
        f = {"exp": lambda v: np.exp(v / 50), "cube": lambda v: v ** 3, "affine": lambda v: 2 * v + 7}[kind]
        y = f(x)
        # the transform must keep distinct values distinct for the invariance to hold
        if len(set(y.tolist())) != len(set(x.tolist())):
            return
        assert rank_order(x, names) == rank_order(y, names)

    def test_cvar_prefers_safe_policy(self):
        # state 0: action 0 pays 0.5 then 0.5 for sure; action 1 pays 0 then 0.5 or 2.0 at random
        P = np.zeros((3, 2, 3))
        P[0, 0, 1] = 1.0
        P[0, 1, 1] = P[0, 1, 2] = 0.5
        P[1, :, 1] = 1.0
        P[2, :, 2] = 1.0
        R = np.array([[0.5, 0.0], [0.5, 0.5], [2.0, 2.0]])
        mdp = MdpSpec(P, R, [1.0, 0.0, 0.0], 2, 1.0)
        pols = {"careful": TabularPolicy.deterministic([0, 0, 0], 2),
                "greedy": TabularPolicy.deterministic([1, 0, 0], 2)}

        def exact_stats(pi, alpha=0.3):
            prob, ret = enumerate_paths(P, R, mdp.initial_dist, pi.probs, 2, 1.0)
            keep = prob > 0
            prob, ret = prob[keep], ret[keep]
            order = np.argsort(ret)
            prob, ret = prob[order], ret[order]
            q = ret[np.flatnonzero(np.cumsum(prob) >= alpha - 1e-12)[0]]
            tail = ret <= q
            return prob @ ret, prob[tail] @ ret[tail] / prob[tail].sum()

        names = list(pols)
        stats = [exact_stats(pols[n]) for n in names]
        truth = {"policy_value": np.array([s[0] for s in stats]), "cvar": np.array([s[1] for s in stats])}
        p = PolicyPanel(tuple(names), truth, {"oracle": truth}, {"policy_value": 1.0, "cvar": 1.0})
        assert select_by(p, "oracle", "policy_value").ranking == ("greedy", "careful")
        assert select_by(p, "oracle", "cvar").ranking == ("careful", "greedy")


class TestAggregate:
    def test_skips_none(self):
        assert aggregate([1.0, None, 3.0]) == {"mean": 2.0, "std": 1.0, "n": 2}

    def test_all_none(self):
        assert aggregate([None, None]) == {"mean": None, "std": None, "n": 0}

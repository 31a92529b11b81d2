"""Off-policy selection: rankings, OPE accuracy metrics and top-k portfolio statistics.

Undefined quantities (zero denominators, zero spread) are reported as ``None``
and serialize to JSON ``null``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .errors import ArgumentError, ConfigurationError, PanelError

TARGETS = ("policy_value", "cvar", "lower_quartile")


@dataclass(frozen=True, eq=False)
class PolicyPanel:
    """True and estimated statistics for a set of candidate policies.

    ``true_targets[target]`` and ``estimates[estimator][target]`` hold one value
    per policy in ``names`` order. ``behavior_targets[target]`` is the
    behavior policy's true value of the same statistic.
    """

    names: tuple
    true_targets: dict
    estimates: dict
    behavior_targets: dict
    relative_safety_criteria: float = 1.0

    def __post_init__(self):
        names = tuple(self.names)
        if len(names) < 2:
            raise ArgumentError("a panel needs at least two candidate policies")
        if len(set(names)) != len(names):
            raise ArgumentError("policy names must be unique")
        object.__setattr__(self, "names", names)
        n = len(names)
        for target, v in self.true_targets.items():
            if np.shape(v) != (n,):
                raise PanelError(f"true {target} must have one value per policy")
        for est, per_target in self.estimates.items():
            for target, v in per_target.items():
                if np.shape(v) != (n,):
                    raise PanelError(f"estimator {est!r} target {target!r} does not cover every policy")

    @classmethod
    def from_values(cls, names, true_values, estimates: dict, behavior_value: float,
                    relative_safety_criteria: float = 1.0) -> "PolicyPanel":
        """Panel with only the ``policy_value`` target."""
        return cls(tuple(names), {"policy_value": np.asarray(true_values, dtype=float)},
                   {k: {"policy_value": np.asarray(v, dtype=float)} for k, v in estimates.items()},
                   {"policy_value": float(behavior_value)}, relative_safety_criteria)

    @property
    def n_policies(self) -> int:
        return len(self.names)

    def truth(self, target: str = "policy_value") -> np.ndarray:
        try:
            return np.asarray(self.true_targets[target], dtype=float)
        except KeyError:
            raise PanelError(f"panel has no true values for target {target!r}") from None

    def estimate(self, estimator: str, target: str = "policy_value") -> np.ndarray:
        try:
            return np.asarray(self.estimates[estimator][target], dtype=float)
        except KeyError:
            raise PanelError(f"panel has no {target!r} estimates from {estimator!r}") from None

    def safety_threshold(self, target: str = "policy_value") -> float:
        try:
            return self.relative_safety_criteria * float(self.behavior_targets[target])
        except KeyError:
            raise PanelError(f"panel has no behavior value for target {target!r}") from None


def rank_order(values, names: Sequence[str]) -> list[int]:
    """Indices sorted by descending value, ties by ascending name."""
    values = np.asarray(values, dtype=float)
    return sorted(range(len(names)), key=lambda i: (-values[i], names[i]))


# -- conventional metrics -----------------------------------------------------
def metric_mse(panel: PolicyPanel, estimator: str, target: str = "policy_value") -> float:
    err = panel.estimate(estimator, target) - panel.truth(target)
    return float(np.mean(err ** 2))


def spearman(x, y) -> Optional[float]:
    """Pearson correlation of average ranks; ``None`` when either side is constant."""
    rx, ry = stats.rankdata(x), stats.rankdata(y)
    if np.ptp(rx) == 0 or np.ptp(ry) == 0:
        return None
    rx, ry = rx - rx.mean(), ry - ry.mean()
    return float(rx @ ry / np.sqrt((rx @ rx) * (ry @ ry)))


def metric_rank_correlation(panel: PolicyPanel, estimator: str, target: str = "policy_value") -> Optional[float]:
    return spearman(panel.truth(target), panel.estimate(estimator, target))


def _check_k(panel: PolicyPanel, k: int) -> None:
    if not 1 <= k <= panel.n_policies:
        raise ArgumentError(f"k must lie in [1, {panel.n_policies}]")


def metric_regret_at_k(panel: PolicyPanel, estimator: str, k: int, target: str = "policy_value") -> float:
    _check_k(panel, k)
    truth = panel.truth(target)
    top = rank_order(panel.estimate(estimator, target), panel.names)[:k]
    return float(truth.max() - truth[top].max())


def metric_error_rates(panel: PolicyPanel, estimator: str,
                       target: str = "policy_value") -> tuple[Optional[float], Optional[float]]:
    """(Type I, Type II) error rates of the safety test ``J >= J_bar``."""
    truth, est = panel.truth(target), panel.estimate(estimator, target)
    bar = panel.safety_threshold(target)
    unsafe, safe = truth < bar, truth >= bar
    type1 = float(np.sum((est >= bar) & unsafe) / unsafe.sum()) if unsafe.any() else None
    type2 = float(np.sum((est < bar) & safe) / safe.sum()) if safe.any() else None
    return type1, type2


# -- top-k --------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class TopkReport:
    estimator: str
    target: str
    k: np.ndarray
    best: np.ndarray
    worst: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    safety_violation_rate: np.ndarray
    sharpe_ratio: list

    STATISTICS = ("best", "worst", "mean", "std", "safety_violation_rate", "sharpe_ratio")

    def rows(self) -> list[dict]:
        return [
            {"estimator": self.estimator, "target": self.target, "k": int(k),
             **{s: _plain(getattr(self, s)[j]) for s in self.STATISTICS}}
            for j, k in enumerate(self.k)
        ]


def _plain(x):
    return None if x is None else float(x)


def topk_statistics(panel: PolicyPanel, estimator: str, metric_target: str = "policy_value") -> TopkReport:
    """Portfolio statistics of the top-k policies (by estimate) on their true target values."""
    truth = panel.truth(metric_target)
    order = rank_order(panel.estimate(estimator, metric_target), panel.names)
    bar = panel.safety_threshold(metric_target)
    baseline = float(panel.behavior_targets[metric_target])
    N = panel.n_policies
    best, worst, mean, std, unsafe = (np.empty(N) for _ in range(5))
    sharpe = []
    for j in range(N):
        v = truth[order[: j + 1]]
        best[j], worst[j], mean[j] = v.max(), v.min(), v.mean()
        std[j] = np.sqrt(np.mean((v - v.mean()) ** 2))
        unsafe[j] = np.mean(v < bar)
        sharpe.append(float((best[j] - baseline) / std[j]) if std[j] > 0 else None)
    return TopkReport(estimator, metric_target, np.arange(1, N + 1), best, worst, mean, std, unsafe, sharpe)


@dataclass(frozen=True)
class Selection:
    criterion: str
    ranking: tuple
    estimated: tuple
    true: tuple


def select_by(panel: PolicyPanel, estimator: str, criterion: str = "policy_value") -> Selection:
    """Full descending ranking of policies by an estimated statistic.

    ``criterion`` names a target stored in the panel, e.g. ``"policy_value"``,
    ``"lower_bound"``, ``"lower_quartile"`` or ``"cvar"``.
    """
    try:
        est = panel.estimate(estimator, criterion)
    except PanelError as err:
        raise ConfigurationError(str(err)) from None
    order = rank_order(est, panel.names)
    truth = panel.true_targets.get(criterion)
    true_vals = tuple(float(truth[i]) for i in order) if truth is not None else ()
    return Selection(criterion, tuple(panel.names[i] for i in order),
                     tuple(float(est[i]) for i in order), true_vals)


# -- aggregation --------------------------------------------------------------
def aggregate(values: Sequence[Optional[float]]) -> dict:
    """Mean and population standard deviation across datasets, skipping ``None``."""
    v = np.array([x for x in values if x is not None], dtype=float)
    if v.size == 0:
        return {"mean": None, "std": None, "n": 0}
    return {"mean": float(v.mean()), "std": float(v.std()), "n": int(v.size)}


def panel_metrics(panel: PolicyPanel, estimator: str, target: str = "policy_value") -> dict:
    type1, type2 = metric_error_rates(panel, estimator, target)
    return {
        "estimator": estimator,
        "target": target,
        "mse": metric_mse(panel, estimator, target),
        "rank_correlation": metric_rank_correlation(panel, estimator, target),
        "regret_at_1": metric_regret_at_k(panel, estimator, 1, target),
        "type1_error": type1,
        "type2_error": type2,
    }

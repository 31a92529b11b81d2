"""Input bundle shared by all point estimators, and the estimate record."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..data import LoggedDataset
from ..errors import ArgumentError, ConfigurationError, SupportError
from ..fitting.fqe import FittedQ
from ..fitting.weights import MarginalWeights
from ..mdp import TabularPolicy


@dataclass(frozen=True, eq=False)
class OpeInputs:
    """Logged data plus everything an estimator may read about ``pi``.

    ``ground_truth`` is carried for reporting and never read by estimators.
    """

    dataset: LoggedDataset
    eval_policy: TabularPolicy
    fitted_q: Optional[FittedQ] = None
    marginal_weights: Optional[MarginalWeights] = None
    ground_truth: Optional[float] = None
    step_ratio: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        ds, pi = self.dataset, self.eval_policy
        if ds.action_type != "discrete":
            raise ArgumentError("OpeInputs expects a discrete-action dataset")
        S, A = pi.probs.shape
        if ds.state.max() >= S or ds.next_state.max() >= S or ds.action.max() >= A:
            raise ArgumentError("dataset indices exceed the evaluation policy dimensions")
        prop = ds.behavior_propensity
        if not (prop > 0).all():
            raise SupportError("zero behavior propensity on a logged step")
        ratio = pi.probs[ds.state, ds.action] / prop
        if not np.isfinite(ratio).all():
            raise SupportError("non-finite importance ratio")
        ratio.setflags(write=False)
        object.__setattr__(self, "step_ratio", ratio)

    # -- weights ------------------------------------------------------------
    @property
    def n(self) -> int:
        return self.dataset.n_trajectories

    @property
    def horizon(self) -> int:
        return self.dataset.horizon

    @property
    def discounts(self) -> np.ndarray:
        return self.dataset.discounts

    def cumulative_weights(self) -> np.ndarray:
        """``w_{0:t}`` as an (n, T) array."""
        return np.cumprod(self.step_ratio, axis=1)

    def previous_weights(self) -> np.ndarray:
        """``w_{0:t-1}`` with ``w_{0:-1} = 1``."""
        w = self.cumulative_weights()
        return np.concatenate([np.ones((self.n, 1)), w[:, :-1]], axis=1)

    # -- nuisances ----------------------------------------------------------
    def require_q(self) -> FittedQ:
        if self.fitted_q is None:
            raise ConfigurationError("this estimator needs a fitted Q-function (run the fit stage)")
        return self.fitted_q

    def require_weights(self) -> MarginalWeights:
        if self.marginal_weights is None:
            raise ConfigurationError("this estimator needs marginal importance weights (run the fit stage)")
        return self.marginal_weights

    def q_terms(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``Q_t(s_t, a_t)``, ``V_t(s_t)`` and ``V_{t+1}(s_{t+1})`` as (n, T) arrays.

        ``V(s) = sum_a pi(a | s) Q(s, a)``; the value past the horizon is 0.
        """
        ds = self.dataset
        T = self.horizon
        Qs = self.require_q().stacked(T)
        V = (Qs * self.eval_policy.probs[None]).sum(axis=2)      # (T + 1, S)
        t = np.arange(T)[None, :]
        return Qs[t, ds.state, ds.action], V[t, ds.state], V[t + 1, ds.next_state]

    def initial_value(self) -> np.ndarray:
        """``sum_a pi(a | s_0) Q_0(s_0, a)`` per trajectory."""
        Q0 = self.require_q().table(0)
        return (self.eval_policy.probs * Q0).sum(axis=1)[self.dataset.initial_state]


@dataclass(frozen=True, eq=False)
class PointEstimate:
    """Estimate with per-trajectory contributions.

    ``per_trajectory_values`` always averages to ``value``; for self-normalized
    estimators the i-th entry is ``n`` times the i-th normalized contribution.
    """

    value: float
    estimator_name: str
    per_trajectory_values: np.ndarray

    def __post_init__(self):
        v = np.array(self.per_trajectory_values, dtype=float, copy=True)
        v.setflags(write=False)
        object.__setattr__(self, "per_trajectory_values", v)
        object.__setattr__(self, "value", float(self.value))

    @classmethod
    def from_contributions(cls, per_traj: np.ndarray, name: str) -> "PointEstimate":
        return cls(float(np.mean(per_traj)), name, per_traj)

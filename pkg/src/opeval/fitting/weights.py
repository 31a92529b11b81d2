"""Marginal importance weights from exact occupancies or empirical counts."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..data import LoggedDataset
from ..errors import ArgumentError, SupportError
from ..mdp import MdpSpec, TabularPolicy, exact_occupancy

SOURCES = ("oracle", "empirical", "alm", "mwl")


@dataclass(frozen=True, eq=False)
class MarginalWeights:
    """``rho(s) = d_pi(s) / d_b(s)`` and ``rho(s, a) = d_pi(s, a) / d_b(s, a)``."""

    rho_state: np.ndarray
    rho_state_action: np.ndarray
    source: str
    fit_log: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ArgumentError(f"unknown weight source {self.source!r}")
        rs = np.array(self.rho_state, dtype=float, copy=True)
        rsa = np.array(self.rho_state_action, dtype=float, copy=True)
        if rsa.ndim != 2 or rs.shape != rsa.shape[:1]:
            raise ArgumentError("rho_state must be (S,) and rho_state_action (S, A)")
        if (rs < 0).any() or (rsa < 0).any():
            raise ArgumentError("marginal weights must be nonnegative")
        rs.setflags(write=False)
        rsa.setflags(write=False)
        object.__setattr__(self, "rho_state", rs)
        object.__setattr__(self, "rho_state_action", rsa)

    def to_dict(self) -> dict:
        return {
            "rho_state": self.rho_state.tolist(),
            "rho_state_action": self.rho_state_action.tolist(),
            "source": self.source,
            "fit_log": self.fit_log,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MarginalWeights":
        return cls(np.array(doc["rho_state"]), np.array(doc["rho_state_action"]),
                   doc["source"], doc.get("fit_log", {}))


def _ratio(num: np.ndarray, den: np.ndarray, what: str) -> np.ndarray:
    bad = (den <= 0) & (num > 0)
    if bad.any():
        where = tuple(int(i) for i in np.argwhere(bad)[0])
        raise SupportError(f"behavior {what} occupancy is zero at {where} where the evaluation policy visits")
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def oracle_marginal_weights(mdp: MdpSpec, eval_policy: TabularPolicy,
                            behavior_policy: TabularPolicy) -> MarginalWeights:
    d_pi_s, d_pi_sa = exact_occupancy(mdp, eval_policy)
    d_b_s, d_b_sa = exact_occupancy(mdp, behavior_policy)
    return MarginalWeights(
        _ratio(d_pi_s, d_b_s, "state"),
        _ratio(d_pi_sa, d_b_sa, "state-action"),
        "oracle",
    )


def empirical_occupancy(dataset: LoggedDataset, n_states: int, n_actions: int,
                        smoothing: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Discount-weighted visitation frequencies with additive smoothing.

    ``smoothing`` defaults to ``1 / (n T)`` and is added to every cell before
    renormalizing.
    """
    n, T = dataset.state.shape
    kappa = 1.0 / (n * T) if smoothing is None else smoothing
    w = np.broadcast_to(dataset.discounts / (n * dataset.discounts.sum()), (n, T)).ravel()
    s = dataset.state.ravel()
    x = s * n_actions + dataset.action.ravel()
    c_s = np.bincount(s, weights=w, minlength=n_states)
    c_sa = np.bincount(x, weights=w, minlength=n_states * n_actions).reshape(n_states, n_actions)
    d_s = (c_s + kappa) / (c_s.sum() + kappa * n_states)
    d_sa = (c_sa + kappa) / (c_sa.sum() + kappa * n_states * n_actions)
    return d_s, d_sa


def empirical_marginal_weights(dataset: LoggedDataset, eval_policy: TabularPolicy,
                               mdp_for_eval_occupancy: MdpSpec) -> MarginalWeights:
    """Exact ``d_pi`` over a smoothed empirical estimate of ``d_b``."""
    S, A = eval_policy.probs.shape
    d_pi_s, d_pi_sa = exact_occupancy(mdp_for_eval_occupancy, eval_policy)
    d_b_s, d_b_sa = empirical_occupancy(dataset, S, A)
    return MarginalWeights(d_pi_s / d_b_s, d_pi_sa / d_b_sa, "empirical")


def state_weights_from_pairs(rho_sa: np.ndarray, d_b_sa: np.ndarray) -> np.ndarray:
    """``rho(s) = sum_a d_b(s, a) rho(s, a) / d_b(s)``; 1 where ``d_b(s) = 0``."""
    d_s = d_b_sa.sum(axis=1)
    num = (d_b_sa * rho_sa).sum(axis=1)
    return np.divide(num, d_s, out=np.ones_like(num), where=d_s > 0)

"""Point estimators of the discounted policy value for discrete actions.

Every estimator returns a :class:`PointEstimate` whose per-trajectory values
average to the estimate. Self-normalized variants divide each weight column
(one timestep) by its sum across trajectories.
"""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from ..data import LoggedDataset, _rng, derive_seed
from ..errors import ArgumentError, SupportError
from ..fitting.fqe import FittedQ, fit_fqe
from ..fitting.weights import MarginalWeights, empirical_marginal_weights
from ..mdp import MdpSpec
from .inputs import OpeInputs, PointEstimate

LEVELS = ("state", "state_action")
VARIANTS = ("is", "dr")


def _normalize(w: np.ndarray) -> np.ndarray:
    """Rescale each column to sum to ``n`` (so row means stay on the value scale)."""
    total = w.sum(axis=0)
    if np.any(total <= 0):
        raise SupportError("all self-normalized importance weights are zero at some step")
    return w * (w.shape[0] / total)


def _name(base: str, self_normalized: bool) -> str:
    if not self_normalized:
        return base
    head, _, tail = base.rpartition("-")
    return f"{head}-SN{tail}" if head else f"SN{tail}"


def estimate_dm(inputs: OpeInputs) -> PointEstimate:
    """Average estimated initial-state value ``sum_a pi(a | s_0) Q(s_0, a)``."""
    return PointEstimate.from_contributions(inputs.initial_value(), "DM")


def estimate_tis(inputs: OpeInputs, self_normalized: bool = False) -> PointEstimate:
    w = inputs.cumulative_weights()[:, -1:]
    if self_normalized:
        w = _normalize(w)
    per_traj = w[:, 0] * inputs.dataset.returns
    return PointEstimate.from_contributions(per_traj, _name("TIS", self_normalized))


def estimate_pdis(inputs: OpeInputs, self_normalized: bool = False) -> PointEstimate:
    w = inputs.cumulative_weights()
    if self_normalized:
        w = _normalize(w)
    per_traj = (w * inputs.dataset.reward) @ inputs.discounts
    return PointEstimate.from_contributions(per_traj, _name("PDIS", self_normalized))


def estimate_dr(inputs: OpeInputs, self_normalized: bool = False) -> PointEstimate:
    """Per-decision doubly robust estimate with ``w_{0:-1} = 1``.

    The SN variant normalizes ``w_{0:t}`` and ``w_{0:t-1}`` separately, so the
    ``t = 0`` baseline weight is ``1 / n`` for every trajectory.
    """
    q_sa, v_s, _ = inputs.q_terms()
    w, w_prev = inputs.cumulative_weights(), inputs.previous_weights()
    if self_normalized:
        w, w_prev = _normalize(w), _normalize(w_prev)
    terms = w * (inputs.dataset.reward - q_sa) + w_prev * v_s
    return PointEstimate.from_contributions(terms @ inputs.discounts, _name("DR", self_normalized))


def _td_residual(inputs: OpeInputs) -> np.ndarray:
    q_sa, _, v_next = inputs.q_terms()
    return inputs.dataset.reward + inputs.dataset.discount * v_next - q_sa


def _marginal_estimate(inputs: OpeInputs, weights: np.ndarray, variant: str,
                       self_normalized: bool, name: str) -> PointEstimate:
    if variant not in VARIANTS:
        raise ArgumentError(f"variant must be one of {VARIANTS}")
    if self_normalized:
        weights = _normalize(weights)
    if variant == "is":
        per_traj = (weights * inputs.dataset.reward) @ inputs.discounts
    else:
        per_traj = inputs.initial_value() + (weights * _td_residual(inputs)) @ inputs.discounts
    return PointEstimate.from_contributions(per_traj, _name(f"{name}-{variant.upper()}", self_normalized))


def state_marginal_weights(inputs: OpeInputs) -> np.ndarray:
    """``rho(s_t) w_t(s_t, a_t)`` per logged step."""
    rho = inputs.require_weights().rho_state
    return rho[inputs.dataset.state] * inputs.step_ratio


def state_action_marginal_weights(inputs: OpeInputs) -> np.ndarray:
    """``rho(s_t, a_t)`` per logged step."""
    rho = inputs.require_weights().rho_state_action
    return rho[inputs.dataset.state, inputs.dataset.action]


def estimate_state_marginal(inputs: OpeInputs, variant: str = "is",
                            self_normalized: bool = False) -> PointEstimate:
    return _marginal_estimate(inputs, state_marginal_weights(inputs), variant, self_normalized, "SM")


def estimate_state_action_marginal(inputs: OpeInputs, variant: str = "is",
                                   self_normalized: bool = False) -> PointEstimate:
    return _marginal_estimate(inputs, state_action_marginal_weights(inputs), variant, self_normalized, "SAM")


# -- SOPE ---------------------------------------------------------------------
def sope_weight_schedule(inputs: OpeInputs, k_recent: int, level: str = "state_action") -> np.ndarray:
    """Interpolated weights using per-decision ratios for the ``k`` latest steps.

    For ``t < k`` the weight is ``w_{0:t}``. Otherwise it is
    ``rho(s_{t-k}, a_{t-k}) w_{t-k+1:t}`` (state-action level) or
    ``rho(s_{t-k}) w_{t-k:t}`` (state level).
    """
    T = inputs.horizon
    if level not in LEVELS:
        raise ArgumentError(f"level must be one of {LEVELS}")
    if not 0 <= k_recent <= T:
        raise ArgumentError(f"k_recent must lie in [0, {T}]")
    ratio = inputs.step_ratio
    cum = inputs.cumulative_weights()
    out = np.empty_like(cum)
    out[:, :k_recent] = cum[:, :k_recent]
    if k_recent == T:
        return out
    mw = inputs.require_weights()
    s, a = inputs.dataset.state, inputs.dataset.action
    for t in range(k_recent, T):
        lag = t - k_recent
        if level == "state_action":
            out[:, t] = mw.rho_state_action[s[:, lag], a[:, lag]] * np.prod(ratio[:, lag + 1:t + 1], axis=1)
        else:
            out[:, t] = mw.rho_state[s[:, lag]] * np.prod(ratio[:, lag:t + 1], axis=1)
    return out


def estimate_sope(inputs: OpeInputs, k_recent: int, level: str = "state_action",
                  variant: str = "is", self_normalized: bool = False) -> PointEstimate:
    """SOPE-SAM-IS/DR (or SOPE-SM-IS/DR) with the interpolated weight schedule."""
    w = sope_weight_schedule(inputs, k_recent, level)
    prefix = "SOPE-SAM" if level == "state_action" else "SOPE-SM"
    est = _marginal_estimate(inputs, w, variant, self_normalized, prefix)
    return PointEstimate(est.value, f"{est.estimator_name}(k={k_recent})", est.per_trajectory_values)


# -- DRL ----------------------------------------------------------------------
NuisanceFn = Callable[[LoggedDataset], "tuple[MarginalWeights, FittedQ]"]


def fold_assignment(n: int, k_folds: int, seed: int) -> np.ndarray:
    """Balanced fold labels from a seeded shuffle of trajectory indices."""
    if k_folds < 2:
        raise ArgumentError("k_folds must be >= 2")
    if k_folds > n:
        raise ArgumentError(f"{k_folds} folds leave some fold with zero trajectories (n = {n})")
    perm = _rng(derive_seed(seed, n, k_folds)).permutation(n)
    folds = np.empty(n, dtype=np.int64)
    folds[perm] = np.arange(n) % k_folds
    return folds


def _drl_contributions(inputs: OpeInputs) -> np.ndarray:
    rho = state_action_marginal_weights(inputs)
    rho_prev = np.concatenate([np.ones((inputs.n, 1)), rho[:, :-1]], axis=1)
    q_sa, v_s, _ = inputs.q_terms()
    terms = rho * (inputs.dataset.reward - q_sa) + rho_prev * v_s
    return terms @ inputs.discounts


def estimate_drl(inputs: OpeInputs, k_folds: int = 2, seed: int = 0,
                 mdp: Optional[MdpSpec] = None, fold_ids: Optional[np.ndarray] = None,
                 nuisance_fn: Optional[NuisanceFn] = None) -> PointEstimate:
    """Cross-fitted DR with marginal weights; ``rho(s_{-1}, a_{-1}) = 1``.

    Nuisances for fold ``j`` are fitted on the other folds. By default these
    are :func:`empirical_marginal_weights` (which needs ``mdp`` for the
    evaluation occupancy) and :func:`fit_fqe`; ``nuisance_fn`` overrides both.
    ``fold_ids`` overrides the seeded assignment.
    """
    ds, pi = inputs.dataset, inputs.eval_policy
    n = inputs.n
    if fold_ids is None:
        fold_ids = fold_assignment(n, k_folds, seed)
    else:
        fold_ids = np.asarray(fold_ids)
        if fold_ids.shape != (n,):
            raise ArgumentError("fold_ids must have one label per trajectory")
        k_folds = int(fold_ids.max()) + 1
        if k_folds < 2:
            raise ArgumentError("need at least two folds")
    if nuisance_fn is None:
        if mdp is None:
            raise ArgumentError("estimate_drl needs mdp (for empirical weights) or a nuisance_fn")

        def nuisance_fn(train):
            return empirical_marginal_weights(train, pi, mdp), fit_fqe(train, pi)

    per_traj = np.empty(n)
    for j in range(k_folds):
        held = np.flatnonzero(fold_ids == j)
        if held.size == 0:
            raise ArgumentError(f"fold {j} has zero trajectories")
        weights, q = nuisance_fn(ds.subset(np.flatnonzero(fold_ids != j)))
        fold_inputs = OpeInputs(ds.subset(held), pi, fitted_q=q, marginal_weights=weights)
        per_traj[held] = _drl_contributions(fold_inputs)
    return PointEstimate.from_contributions(per_traj, "DRL")


# -- registry -----------------------------------------------------------------
def _reg():
    return {
        "DM": estimate_dm,
        "TIS": estimate_tis,
        "PDIS": estimate_pdis,
        "DR": estimate_dr,
        "SNTIS": lambda i: estimate_tis(i, True),
        "SNPDIS": lambda i: estimate_pdis(i, True),
        "SNDR": lambda i: estimate_dr(i, True),
        "SM-IS": lambda i: estimate_state_marginal(i, "is"),
        "SM-DR": lambda i: estimate_state_marginal(i, "dr"),
        "SM-SNIS": lambda i: estimate_state_marginal(i, "is", True),
        "SM-SNDR": lambda i: estimate_state_marginal(i, "dr", True),
        "SAM-IS": lambda i: estimate_state_action_marginal(i, "is"),
        "SAM-DR": lambda i: estimate_state_action_marginal(i, "dr"),
        "SAM-SNIS": lambda i: estimate_state_action_marginal(i, "is", True),
        "SAM-SNDR": lambda i: estimate_state_action_marginal(i, "dr", True),
    }


ESTIMATORS = _reg()
NEEDS_Q = {"DM", "DR", "SNDR", "SM-DR", "SM-SNDR", "SAM-DR", "SAM-SNDR"}
NEEDS_WEIGHTS = {k for k in ESTIMATORS if k.startswith(("SM-", "SAM-"))}


def run_estimator(name: str, inputs: OpeInputs, **options) -> PointEstimate:
    """Dispatch by registry name; ``SOPE-*`` and ``DRL`` take keyword options."""
    if name in ESTIMATORS:
        est = ESTIMATORS[name](inputs)
        return PointEstimate(est.value, name, est.per_trajectory_values)
    if name == "DRL":
        return estimate_drl(inputs, **options)
    if name.startswith("SOPE-"):
        level = "state_action" if name.startswith("SOPE-SAM") else "state"
        variant = "dr" if name.endswith("DR") else "is"
        est = estimate_sope(inputs, options.get("k_recent", 1), level, variant, "SN" in name)
        return PointEstimate(est.value, name, est.per_trajectory_values)
    raise ArgumentError(f"unknown estimator {name!r}")

"""Flattened transition tuples shared by the fitting routines."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import LoggedDataset
from ..errors import ArgumentError
from ..mdp import TabularPolicy

HORIZON_MODES = ("episodic", "continuing")


@dataclass(frozen=True, eq=False)
class Tuples:
    """Logged tuples in row order (trajectory-major) with sampling weights.

    ``nu`` sums to one. In episodic mode a tuple at step ``t`` gets weight
    ``gamma^t / (n * Z)`` with ``Z = sum_{t<T} gamma^t``, the last step of
    each episode does not bootstrap (``mask = 0``) and the initial-state term
    carries ``1 / Z``. In continuing mode tuples are weighted uniformly, every
    tuple bootstraps and the initial-state term carries ``1 - gamma``.
    """

    x: np.ndarray            # flat (s, a) index
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    nu: np.ndarray
    mask: np.ndarray
    init_coef: float
    mu0: np.ndarray          # (S, A) initial state-action distribution under pi
    next_pi: np.ndarray      # (N, A) eval-policy probabilities at s_next
    gamma: float
    n_states: int
    n_actions: int

    @property
    def n_pairs(self) -> int:
        return self.n_states * self.n_actions

    def onehot(self) -> np.ndarray:
        E = np.zeros((len(self.x), self.n_pairs))
        E[np.arange(len(self.x)), self.x] = 1.0
        return E

    def next_embedding(self) -> np.ndarray:
        """Rows ``gamma * mask_i * onehot(s'_i) (x) pi(. | s'_i)`` in flat (s, a) space."""
        A = self.n_actions
        out = np.zeros((len(self.x), self.n_pairs))
        cols = self.s_next[:, None] * A + np.arange(A)[None, :]
        out[np.arange(len(self.x))[:, None], cols] = (self.gamma * self.mask)[:, None] * self.next_pi
        return out


def build_tuples(dataset: LoggedDataset, policy: TabularPolicy, horizon_mode: str = "episodic") -> Tuples:
    if horizon_mode not in HORIZON_MODES:
        raise ArgumentError(f"horizon_mode must be one of {HORIZON_MODES}")
    if dataset.action_type != "discrete":
        raise ArgumentError("tabular fitting needs a discrete-action dataset")
    n, T = dataset.state.shape
    S, A = policy.probs.shape
    if dataset.state.max() >= S or dataset.action.max() >= A or dataset.next_state.max() >= S:
        raise ArgumentError("dataset indices exceed the policy dimensions")
    g = dataset.discount
    if horizon_mode == "episodic":
        disc = g ** np.arange(T)
        Z = disc.sum()
        nu = np.tile(disc / (n * Z), n)
        mask = np.tile((np.arange(T) < T - 1).astype(float), n)
        init_coef = 1.0 / Z
    else:
        if g >= 1.0:
            raise ArgumentError("continuing mode needs discount < 1 (the (1 - gamma) initial term vanishes)")
        nu = np.full(n * T, 1.0 / (n * T))
        mask = np.ones(n * T)
        init_coef = 1.0 - g
    s = dataset.state.ravel()
    a = dataset.action.ravel()
    s_next = dataset.next_state.ravel()
    counts0 = np.bincount(dataset.initial_state, minlength=S) / n
    return Tuples(
        x=s * A + a, s=s, a=a, r=dataset.reward.ravel(), s_next=s_next,
        nu=nu, mask=mask, init_coef=init_coef,
        mu0=counts0[:, None] * policy.probs, next_pi=policy.probs[s_next],
        gamma=g, n_states=S, n_actions=A,
    )

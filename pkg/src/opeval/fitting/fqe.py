"""Tabular fitted Q evaluation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..data import LoggedDataset
from ..errors import ArgumentError, ConvergenceError
from ..mdp import TabularPolicy


@dataclass(frozen=True, eq=False)
class FittedQ:
    """Estimated Q-function.

    ``q`` has shape (T, S, A) for a time-indexed fit (``q[t]`` is the value
    with ``T - t`` steps to go) or (S, A) for a stationary one.
    """

    q: np.ndarray
    fit_log: dict = field(default_factory=dict)

    def __post_init__(self):
        q = np.array(self.q, dtype=float, copy=True)
        if q.ndim not in (2, 3):
            raise ArgumentError("q must be (S, A) or (T, S, A)")
        if not np.isfinite(q).all():
            raise ArgumentError("fitted Q contains non-finite entries")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @property
    def time_dependent(self) -> bool:
        return self.q.ndim == 3

    def table(self, t: int) -> np.ndarray:
        """(S, A) table used at step ``t``; zero past the horizon."""
        if not self.time_dependent:
            return self.q
        if t >= self.q.shape[0]:
            return np.zeros(self.q.shape[1:])
        return self.q[t]

    def stacked(self, horizon: int) -> np.ndarray:
        """(horizon + 1, S, A) tables for steps 0..horizon (last one all zero)."""
        if self.time_dependent:
            if self.q.shape[0] != horizon:
                raise ArgumentError(f"Q has {self.q.shape[0]} steps, dataset horizon is {horizon}")
            return np.concatenate([self.q, np.zeros((1,) + self.q.shape[1:])])
        out = np.broadcast_to(self.q, (horizon + 1,) + self.q.shape).copy()
        out[horizon] = 0.0
        return out

    def to_dict(self) -> dict:
        return {"q": self.q.tolist(), "fit_log": self.fit_log}

    @classmethod
    def from_dict(cls, doc: dict) -> "FittedQ":
        return cls(np.array(doc["q"]), doc.get("fit_log", {}))

    @classmethod
    def zeros(cls, horizon: int, n_states: int, n_actions: int) -> "FittedQ":
        return cls(np.zeros((horizon, n_states, n_actions)), {"source": "zero"})


def empirical_model(dataset: LoggedDataset, n_states: int, n_actions: int):
    """Visit counts, mean rewards and next-state frequencies from all logged steps."""
    x = (dataset.state * n_actions + dataset.action).ravel()
    SA = n_states * n_actions
    counts = np.bincount(x, minlength=SA).astype(float)
    r_sum = np.bincount(x, weights=dataset.reward.ravel(), minlength=SA)
    trans = np.zeros((SA, n_states))
    np.add.at(trans, (x, dataset.next_state.ravel()), 1.0)
    visited = counts > 0
    r_mean = np.divide(r_sum, counts, out=np.zeros(SA), where=visited)
    P_hat = np.divide(trans, counts[:, None], out=np.zeros_like(trans), where=visited[:, None])
    shape = (n_states, n_actions)
    return counts.reshape(shape), r_mean.reshape(shape), P_hat.reshape(shape + (n_states,))


def fit_fqe(dataset: LoggedDataset, eval_policy: TabularPolicy, tolerance: float = 1e-10,
            time_dependent: bool = True, max_iters: int = 100_000) -> FittedQ:
    """Fit ``Q`` to the empirical evaluation Bellman operator.

    Logged transitions from every step are pooled into one empirical model
    (the dynamics are time-homogeneous). In time-dependent mode the Bellman
    backup is swept from ``t = T - 1`` down to 0 with ``V_T = 0``; otherwise the
    discounted fixed point is iterated until the sup-norm change falls below
    ``tolerance``. State-action pairs never logged keep ``Q = 0``.
    """
    if dataset.state.size == 0:
        raise ArgumentError("dataset has no transitions")
    S, A = eval_policy.probs.shape
    counts, r_mean, P_hat = empirical_model(dataset, S, A)
    visited = counts > 0
    pi = eval_policy.probs
    g = dataset.discount

    if time_dependent:
        T = dataset.horizon
        Q = np.zeros((T, S, A))
        v_next = np.zeros(S)
        for t in reversed(range(T)):
            Q[t] = np.where(visited, r_mean + g * P_hat @ v_next, 0.0)
            v_next = (pi * Q[t]).sum(axis=1)
        return FittedQ(Q, {"mode": "time_dependent", "iterations": T, "residual": 0.0})

    if g >= 1.0:
        raise ArgumentError("stationary FQE needs discount < 1; use time_dependent=True")
    Q = np.zeros((S, A))
    residual = np.inf
    for it in range(1, max_iters + 1):
        Q_new = np.where(visited, r_mean + g * P_hat @ (pi * Q).sum(axis=1), 0.0)
        residual = float(np.abs(Q_new - Q).max())
        Q = Q_new
        if residual < tolerance:
            return FittedQ(Q, {"mode": "stationary", "iterations": it, "residual": residual})
    raise ConvergenceError(f"FQE did not converge in {max_iters} iterations", residual)

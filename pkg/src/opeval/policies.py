"""Candidate and behavior policy heads applied to Q-tables."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError
from .mdp import TabularPolicy


def epsilon_greedy_head(q: np.ndarray, epsilon: float, name: str = "epsilon_greedy") -> TabularPolicy:
    """``pi(a|s) = (1 - eps) * 1{a = argmax q(s, .)} + eps / |A|``.

    Ties in the argmax go to the lowest action index.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ArgumentError(f"epsilon must lie in [0, 1], got {epsilon}")
    q = np.asarray(q, dtype=float)
    n_actions = q.shape[1]
    probs = np.full(q.shape, epsilon / n_actions)
    probs[np.arange(q.shape[0]), q.argmax(axis=1)] += 1.0 - epsilon
    return TabularPolicy(probs, name)


def softmax_head(q: np.ndarray, temperature: float, name: str = "softmax") -> TabularPolicy:
    """Boltzmann policy ``pi(a|s) ~ exp(q(s, a) / temperature)``."""
    if not temperature > 0:
        raise ArgumentError(f"temperature must be positive, got {temperature}")
    z = np.asarray(q, dtype=float) / temperature
    z = np.exp(z - z.max(axis=1, keepdims=True))
    return TabularPolicy(z / z.sum(axis=1, keepdims=True), name)


@dataclass(frozen=True)
class PolicyHead:
    """Recipe turning a Q-table into a stochastic policy.

    ``kind`` is ``"epsilon_greedy"`` (``param`` = epsilon) or ``"softmax"``
    (``param`` = temperature).
    """

    kind: str
    param: float
    name: str

    def __post_init__(self):
        if self.kind not in ("epsilon_greedy", "softmax"):
            raise ArgumentError(f"unknown policy head {self.kind!r}")

    def apply(self, base_q: np.ndarray) -> TabularPolicy:
        if self.kind == "epsilon_greedy":
            return epsilon_greedy_head(base_q, self.param, self.name)
        return softmax_head(base_q, self.param, self.name)

"""Synthetic finite-horizon MDPs and exact dynamic-programming oracles.

Every episode has exactly ``horizon`` steps; the episode ends after step
``horizon - 1`` regardless of the state reached.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import special, stats

from .errors import ArgumentError

SCHEMA_VERSION = 1
_ROW_TOL = 1e-12


def _frozen(x, dtype=np.float64) -> np.ndarray:
    arr = np.array(x, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def canonical_json(obj) -> str:
    """Deterministic JSON text used for hashing and persisted documents."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


@dataclass(frozen=True)
class RewardNoise:
    """Noise model added on top of the mean reward ``R(s, a)``.

    kind is one of ``"none"``, ``"gaussian"`` or ``"bernoulli"``. Gaussian noise
    is truncated symmetrically around the mean so realized rewards stay inside
    the MDP reward range while ``E[r | s, a] = R(s, a)`` is preserved exactly.
    Bernoulli-scaled rewards take the two range endpoints with the probability
    that reproduces the mean.
    """

    kind: str = "none"
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "gaussian", "bernoulli"):
            raise ArgumentError(f"unknown reward noise kind {self.kind!r}")
        if self.kind == "gaussian" and not self.sigma > 0:
            raise ArgumentError("gaussian reward noise needs sigma > 0")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "sigma": float(self.sigma)}


@dataclass(frozen=True, eq=False)
class MdpSpec:
    """Finite-horizon tabular MDP.

    Parameters
    ----------
    transition : array of shape (n_states, n_actions, n_states)
        ``transition[s, a, s']`` is the probability of moving to ``s'``.
    reward_mean : array of shape (n_states, n_actions)
    initial_dist : array of shape (n_states,)
    horizon : int
        Steps per episode.
    discount : float
        In (0, 1].
    reward_noise : RewardNoise
    reward_range : (float, float), optional
        Bounds of realized rewards. Defaults to the range of ``reward_mean``.
    seed : int, optional
        Seed the spec was generated from, if any (recorded in the document).
    """

    transition: np.ndarray
    reward_mean: np.ndarray
    initial_dist: np.ndarray
    horizon: int
    discount: float
    reward_noise: RewardNoise = field(default_factory=RewardNoise)
    reward_range: Optional[tuple] = None
    seed: Optional[int] = None

    def __post_init__(self):
        P = _frozen(self.transition)
        R = _frozen(self.reward_mean)
        p0 = _frozen(self.initial_dist)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ArgumentError("transition must have shape (S, A, S)")
        S, A, _ = P.shape
        if R.shape != (S, A):
            raise ArgumentError(f"reward_mean must have shape {(S, A)}, got {R.shape}")
        if p0.shape != (S,):
            raise ArgumentError(f"initial_dist must have shape {(S,)}, got {p0.shape}")
        if (P < 0).any() or np.abs(P.sum(axis=2) - 1).max() > _ROW_TOL:
            raise ArgumentError("transition rows must be nonnegative and sum to 1")
        if (p0 < 0).any() or abs(p0.sum() - 1) > _ROW_TOL:
            raise ArgumentError("initial_dist must be nonnegative and sum to 1")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ArgumentError("horizon must be a positive integer")
        if not 0 < self.discount <= 1:
            raise ArgumentError("discount must lie in (0, 1]")
        if not np.isfinite(R).all():
            raise ArgumentError("reward_mean must be finite")
        lo, hi = self.reward_range if self.reward_range is not None else (R.min(), R.max())
        if lo > R.min() or hi < R.max():
            raise ArgumentError("reward_range must contain every mean reward")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward_mean", R)
        object.__setattr__(self, "initial_dist", p0)
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "discount", float(self.discount))
        object.__setattr__(self, "reward_range", (float(lo), float(hi)))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def discounts(self) -> np.ndarray:
        """``gamma ** t`` for t = 0..T-1."""
        return self.discount ** np.arange(self.horizon)

    def with_rewards(self, reward_mean, reward_range=None) -> "MdpSpec":
        return MdpSpec(
            self.transition, reward_mean, self.initial_dist, self.horizon,
            self.discount, self.reward_noise, reward_range, self.seed,
        )

    def with_horizon(self, horizon: int) -> "MdpSpec":
        return MdpSpec(
            self.transition, self.reward_mean, self.initial_dist, horizon,
            self.discount, self.reward_noise, self.reward_range, self.seed,
        )

    def permuted(self, perm) -> "MdpSpec":
        """Relabel states so that new state ``i`` is old state ``perm[i]``."""
        perm = np.asarray(perm)
        P = self.transition[perm][:, :, perm]
        return MdpSpec(
            P, self.reward_mean[perm], self.initial_dist[perm], self.horizon,
            self.discount, self.reward_noise, self.reward_range, self.seed,
        )

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "type": "MdpSpec",
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "transition": self.transition.tolist(),
            "reward_mean": self.reward_mean.tolist(),
            "reward_noise": self.reward_noise.to_dict(),
            "reward_range": list(self.reward_range),
            "initial_dist": self.initial_dist.tolist(),
            "horizon": self.horizon,
            "discount": self.discount,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MdpSpec":
        if doc.get("schema_version") != SCHEMA_VERSION or doc.get("type") != "MdpSpec":
            raise ArgumentError("not an MdpSpec document of a supported schema version")
        spec = cls(
            transition=doc["transition"],
            reward_mean=doc["reward_mean"],
            initial_dist=doc["initial_dist"],
            horizon=doc["horizon"],
            discount=doc["discount"],
            reward_noise=RewardNoise(**doc["reward_noise"]),
            reward_range=tuple(doc["reward_range"]),
            seed=doc.get("seed"),
        )
        if (spec.n_states, spec.n_actions) != (doc["n_states"], doc["n_actions"]):
            raise ArgumentError("n_states/n_actions disagree with the stored tables")
        return spec

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "MdpSpec":
        return cls.from_dict(json.loads(text))

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    """Stochastic policy ``probs[s, a] = pi(a | s)``."""

    probs: np.ndarray
    name: str = "policy"

    def __post_init__(self):
        p = _frozen(self.probs)
        if p.ndim != 2:
            raise ArgumentError("policy probs must be a (S, A) matrix")
        if (p < 0).any() or np.abs(p.sum(axis=1) - 1).max() > _ROW_TOL:
            raise ArgumentError(f"policy {self.name!r}: rows must be nonnegative and sum to 1")
        object.__setattr__(self, "probs", p)

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    @classmethod
    def uniform(cls, n_states: int, n_actions: int, name: str = "uniform") -> "TabularPolicy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions), name)

    @classmethod
    def deterministic(cls, actions, n_actions: int, name: str = "deterministic") -> "TabularPolicy":
        actions = np.asarray(actions)
        probs = np.zeros((len(actions), n_actions))
        probs[np.arange(len(actions)), actions] = 1.0
        return cls(probs, name)

    def to_dict(self) -> dict:
        return {"name": self.name, "probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "TabularPolicy":
        return cls(doc["probs"], doc["name"])


def _check_dims(mdp: MdpSpec, policy: TabularPolicy) -> None:
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ArgumentError(
            f"policy {policy.name!r} has shape {policy.probs.shape}, "
            f"MDP needs {(mdp.n_states, mdp.n_actions)}"
        )


# -- constructors ------------------------------------------------------------

def make_random_mdp(
    n_states: int,
    n_actions: int,
    horizon: int,
    discount: float,
    seed: int,
    reward_noise: Optional[RewardNoise] = None,
) -> MdpSpec:
    """Random MDP with Dirichlet(1) transition rows and U[0, 1] mean rewards.

    The initial distribution is also drawn from a flat Dirichlet. Rewards
    default to Gaussian noise with ``sigma = 0.1`` truncated to ``[0, 1]``.
    """
    if n_states < 2 or n_actions < 2:
        raise ArgumentError("need at least 2 states and 2 actions")
    if horizon < 1 or not 0 < discount <= 1:
        raise ArgumentError("horizon must be >= 1 and discount in (0, 1]")
    rng = np.random.default_rng(np.uint64(seed))
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    P /= P.sum(axis=2, keepdims=True)
    R = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    p0 = rng.dirichlet(np.ones(n_states))
    p0 /= p0.sum()
    if reward_noise is None:
        reward_noise = RewardNoise("gaussian", 0.1)
    return MdpSpec(P, R, p0, horizon, discount, reward_noise, (0.0, 1.0), int(seed))


def make_chain2(horizon: int = 2, discount: float = 1.0) -> MdpSpec:
    """Two-state chain: the next state equals the action, reward 1 iff ``a == s``.

    Episodes start in state 0 and rewards are deterministic.
    """
    P = np.zeros((2, 2, 2))
    for s in range(2):
        for a in range(2):
            P[s, a, a] = 1.0
    R = np.eye(2)
    return MdpSpec(P, R, [1.0, 0.0], horizon, discount, RewardNoise(), (0.0, 1.0))


def make_loop_mdp(horizon: int = 50, discount: float = 0.95, slip: float = 0.1) -> MdpSpec:
    """Three-state ring used to exercise marginal importance weights.

    Action 0 advances around the ring ``0 -> 1 -> 2 -> 0`` and action 1 stays;
    both slip to the other outcome with probability ``slip``. Advancing out of
    state 2 pays 1, staying anywhere pays 0.2.
    """
    P = np.zeros((3, 2, 3))
    for s in range(3):
        nxt = (s + 1) % 3
        P[s, 0, nxt] += 1 - slip
        P[s, 0, s] += slip
        P[s, 1, s] += 1 - slip
        P[s, 1, nxt] += slip
    R = np.full((3, 2), 0.2)
    R[:, 0] = 0.0
    R[2, 0] = 1.0
    return MdpSpec(P, R, [1 / 3, 1 / 3, 1 / 3], horizon, discount, RewardNoise(), (0.0, 1.0))


# -- exact oracles -------------------------------------------------------------

def exact_q_function(mdp: MdpSpec, policy: TabularPolicy, time_dependent: bool = True,
                     tol: float = 1e-10, max_iters: int = 1_000_000) -> np.ndarray:
    """Q-function of ``policy``.

    Returns an array of shape (T, S, A) holding ``Q_t`` when ``time_dependent``,
    otherwise the (S, A) fixed point of the discounted evaluation Bellman
    operator (only defined for discount < 1).
    """
    _check_dims(mdp, policy)
    P, R, pi, g = mdp.transition, mdp.reward_mean, policy.probs, mdp.discount
    if time_dependent:
        Q = np.empty((mdp.horizon, mdp.n_states, mdp.n_actions))
        v_next = np.zeros(mdp.n_states)
        for t in reversed(range(mdp.horizon)):
            Q[t] = R + g * P @ v_next
            v_next = (pi * Q[t]).sum(axis=1)
        return Q
    if g >= 1.0:
        raise ArgumentError("stationary Q-function needs discount < 1")
    Q = np.zeros_like(R)
    for _ in range(max_iters):
        Q_new = R + g * P @ (pi * Q).sum(axis=1)
        if np.abs(Q_new - Q).max() < tol:
            return Q_new
        Q = Q_new
    raise ArgumentError("stationary policy evaluation did not converge")  # pragma: no cover


def exact_policy_value(mdp: MdpSpec, policy: TabularPolicy) -> float:
    """``J(pi) = sum_t gamma^t E[r_t]`` by backward induction."""
    Q0 = exact_q_function(mdp, policy, time_dependent=True)[0]
    return float(mdp.initial_dist @ (policy.probs * Q0).sum(axis=1))


def state_distributions(mdp: MdpSpec, policy: TabularPolicy) -> np.ndarray:
    """``Pr[s_t = s]`` for t = 0..T-1 as a (T, S) array."""
    _check_dims(mdp, policy)
    out = np.empty((mdp.horizon, mdp.n_states))
    p = mdp.initial_dist.copy()
    M = np.einsum("sa,sax->sx", policy.probs, mdp.transition)
    for t in range(mdp.horizon):
        out[t] = p
        p = p @ M
    return out


def exact_occupancy(mdp: MdpSpec, policy: TabularPolicy) -> tuple[np.ndarray, np.ndarray]:
    """Discount-weighted, normalized average of per-step visitation.

    ``d(s) = sum_t gamma^t Pr[s_t = s] / sum_t gamma^t`` and
    ``d(s, a) = d(s) pi(a | s)``.
    """
    dist = state_distributions(mdp, policy)
    disc = mdp.discounts
    d_state = disc @ dist / disc.sum()
    return d_state, d_state[:, None] * policy.probs


def optimal_q_function(mdp: MdpSpec) -> np.ndarray:
    """Initial-step Q of the finite-horizon optimal policy, shape (S, A)."""
    v_next = np.zeros(mdp.n_states)
    for _ in range(mdp.horizon):
        Q = mdp.reward_mean + mdp.discount * mdp.transition @ v_next
        v_next = Q.max(axis=1)
    return Q


def sample_rewards(mdp: MdpSpec, states: np.ndarray, actions: np.ndarray,
                   rng: np.random.Generator) -> np.ndarray:
    """Draw realized rewards for a batch of (state, action) pairs."""
    mean = mdp.reward_mean[states, actions]
    noise = mdp.reward_noise
    lo, hi = mdp.reward_range
    if noise.kind == "none":
        return mean.copy()
    if noise.kind == "gaussian":
        half = np.minimum(mean - lo, hi - mean)
        # symmetric truncation keeps E[r | s, a] = R(s, a)
        lo_cdf = special.ndtr(-half / noise.sigma)
        u = lo_cdf + rng.random(mean.shape) * (1.0 - 2.0 * lo_cdf)
        z = np.where(half > 0, special.ndtri(u), 0.0)
        return np.clip(mean + noise.sigma * z, lo, hi)
    if hi == lo:
        return mean.copy()
    p_hi = (mean - lo) / (hi - lo)
    return np.where(rng.random(mean.shape) < p_hi, hi, lo)


# -- continuous actions --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ContinuousActionMdpSpec:
    """Tabular-state MDP with a one-dimensional action interval.

    The mean reward is linear in the action within each state,
    ``r(s, a) = reward_intercept[s] + reward_slope[s] * a``. Transitions are
    discretized: the action interval is split into ``bin_transition.shape[1]``
    equal bins and ``bin_transition[s, b]`` is the next-state distribution for
    any action in bin ``b``. Rewards are deterministic.
    """

    reward_intercept: np.ndarray
    reward_slope: np.ndarray
    bin_transition: np.ndarray
    initial_dist: np.ndarray
    horizon: int
    discount: float
    action_low: float = -1.0
    action_high: float = 1.0

    def __post_init__(self):
        P = _frozen(self.bin_transition)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ArgumentError("bin_transition must have shape (S, n_bins, S)")
        if (P < 0).any() or np.abs(P.sum(axis=2) - 1).max() > _ROW_TOL:
            raise ArgumentError("transition rows must be nonnegative and sum to 1")
        if not self.action_low < self.action_high:
            raise ArgumentError("action_low must be below action_high")
        p0 = _frozen(self.initial_dist)
        if abs(p0.sum() - 1) > _ROW_TOL or (p0 < 0).any():
            raise ArgumentError("initial_dist must sum to 1")
        if self.horizon < 1 or not 0 < self.discount <= 1:
            raise ArgumentError("horizon must be >= 1 and discount in (0, 1]")
        object.__setattr__(self, "bin_transition", P)
        object.__setattr__(self, "initial_dist", p0)
        object.__setattr__(self, "reward_intercept", _frozen(self.reward_intercept))
        object.__setattr__(self, "reward_slope", _frozen(self.reward_slope))

    @property
    def n_states(self) -> int:
        return self.bin_transition.shape[0]

    @property
    def bin_edges(self) -> np.ndarray:
        return np.linspace(self.action_low, self.action_high, self.bin_transition.shape[1] + 1)

    def action_bin(self, actions: np.ndarray) -> np.ndarray:
        n_bins = self.bin_transition.shape[1]
        idx = np.floor((actions - self.action_low) / (self.action_high - self.action_low) * n_bins)
        return np.clip(idx.astype(int), 0, n_bins - 1)

    def reward(self, states, actions) -> np.ndarray:
        return self.reward_intercept[states] + self.reward_slope[states] * actions


def make_continuous_mdp(n_states: int, n_bins: int, horizon: int, discount: float,
                        seed: int) -> ContinuousActionMdpSpec:
    rng = np.random.default_rng(np.uint64(seed))
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_bins))
    P /= P.sum(axis=2, keepdims=True)
    p0 = np.full(n_states, 1.0 / n_states)
    return ContinuousActionMdpSpec(
        reward_intercept=rng.uniform(0.25, 0.75, n_states),
        reward_slope=rng.uniform(-0.25, 0.25, n_states),
        bin_transition=P, initial_dist=p0, horizon=horizon, discount=discount,
    )


@dataclass(frozen=True, eq=False)
class GaussianPolicy:
    """Per-state Gaussian truncated to ``[low, high]``."""

    mean_per_state: np.ndarray
    stddev: float
    low: float = -1.0
    high: float = 1.0
    name: str = "gaussian"

    def __post_init__(self):
        if not self.stddev > 0:
            raise ArgumentError("stddev must be positive")
        if not self.low < self.high:
            raise ArgumentError("truncation interval is empty")
        object.__setattr__(self, "mean_per_state", _frozen(self.mean_per_state))

    def _dist(self, states):
        mu = self.mean_per_state[states]
        a = (self.low - mu) / self.stddev
        b = (self.high - mu) / self.stddev
        return stats.truncnorm(a, b, loc=mu, scale=self.stddev)

    def density(self, states, actions) -> np.ndarray:
        return self._dist(np.asarray(states)).pdf(actions)

    def sample(self, states, rng: np.random.Generator) -> np.ndarray:
        return self._dist(np.asarray(states)).rvs(random_state=rng)

    def mean_action(self, states) -> np.ndarray:
        return self._dist(np.asarray(states)).mean()

    def bin_probs(self, edges: np.ndarray) -> np.ndarray:
        """Probability of each action bin in each state, shape (S, n_bins)."""
        S = len(self.mean_per_state)
        cdf = self._dist(np.arange(S)[:, None]).cdf(edges[None, :])
        return np.diff(cdf, axis=1)


def exact_continuous_value(mdp: ContinuousActionMdpSpec, policy: GaussianPolicy) -> float:
    """Policy value in a continuous-action MDP, exact up to special-function accuracy."""
    states = np.arange(mdp.n_states)
    r_pi = mdp.reward(states, policy.mean_action(states))
    M = np.einsum("sb,sbx->sx", policy.bin_probs(mdp.bin_edges), mdp.bin_transition)
    v = np.zeros(mdp.n_states)
    for _ in range(mdp.horizon):
        v = r_pi + mdp.discount * M @ v
    return float(mdp.initial_dist @ v)

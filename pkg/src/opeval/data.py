"""Logged dataset collection, persistence and on-policy ground truth.

Persisted layout of a dataset directory::

    manifest.json       metadata (schema version, behavior name, fingerprint,
                        seed, discount, shape, action type)
    trajectories.jsonl  one JSON object per trajectory, in trajectory order,
                        with keys state, action, reward, next_state,
                        behavior_propensity (each a list of length T)
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ArgumentError, SupportError
from .mdp import (
    ContinuousActionMdpSpec,
    GaussianPolicy,
    MdpSpec,
    TabularPolicy,
    _check_dims,
    canonical_json,
    sample_rewards,
)

DATASET_SCHEMA_VERSION = 1
_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One SplitMix64 output step for the 64-bit state ``x``."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, *indices: int) -> int:
    """Mix ``seed`` with each index in turn: ``h <- splitmix64(h ^ splitmix64(i))``."""
    h = splitmix64(int(seed) & _MASK64)
    for i in indices:
        h = splitmix64(h ^ splitmix64(int(i) & _MASK64))
    return h


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.uint64(int(seed) & _MASK64))


def _sample_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw one index per row of a (n, k) probability matrix by inverse CDF."""
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0])
    idx = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def _frozen(x, dtype) -> np.ndarray:
    arr = np.array(x, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LoggedDataset:
    """``n`` trajectories of length ``T`` logged under one behavior policy.

    All step arrays have shape (n, T). ``behavior_propensity`` is the
    probability of the logged action (discrete) or its density (continuous).
    """

    state: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_state: np.ndarray
    behavior_propensity: np.ndarray
    behavior_policy_name: str
    mdp_fingerprint: str
    seed: int
    discount: float
    action_type: str = "discrete"

    def __post_init__(self):
        action_dtype = np.int64 if self.action_type == "discrete" else np.float64
        object.__setattr__(self, "state", _frozen(self.state, np.int64))
        object.__setattr__(self, "action", _frozen(self.action, action_dtype))
        object.__setattr__(self, "reward", _frozen(self.reward, np.float64))
        object.__setattr__(self, "next_state", _frozen(self.next_state, np.int64))
        object.__setattr__(self, "behavior_propensity", _frozen(self.behavior_propensity, np.float64))
        self.validate()

    def validate(self, mdp: Optional[MdpSpec] = None) -> None:
        shape = self.state.shape
        if len(shape) != 2 or shape[0] < 1 or shape[1] < 1:
            raise ArgumentError("dataset needs at least one trajectory of length >= 1")
        for name in ("action", "reward", "next_state", "behavior_propensity"):
            if getattr(self, name).shape != shape:
                raise ArgumentError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.action_type not in ("discrete", "continuous"):
            raise ArgumentError(f"unknown action type {self.action_type!r}")
        prop = self.behavior_propensity
        if not (prop > 0).all() or not np.isfinite(prop).all():
            raise SupportError("every logged step needs a positive behavior propensity")
        if self.action_type == "discrete" and (prop > 1).any():
            raise ArgumentError("discrete propensities must not exceed 1")
        if mdp is not None and mdp.fingerprint() != self.mdp_fingerprint:
            raise ArgumentError("dataset fingerprint does not match the given MDP")

    @property
    def n_trajectories(self) -> int:
        return self.state.shape[0]

    @property
    def horizon(self) -> int:
        return self.state.shape[1]

    @property
    def discounts(self) -> np.ndarray:
        return self.discount ** np.arange(self.horizon)

    @property
    def returns(self) -> np.ndarray:
        """Discounted return of each trajectory."""
        return self.reward @ self.discounts

    @property
    def initial_state(self) -> np.ndarray:
        return self.state[:, 0]

    def subset(self, index) -> "LoggedDataset":
        index = np.asarray(index)
        return LoggedDataset(
            self.state[index], self.action[index], self.reward[index],
            self.next_state[index], self.behavior_propensity[index],
            self.behavior_policy_name, self.mdp_fingerprint, self.seed,
            self.discount, self.action_type,
        )

    # -- persistence ---------------------------------------------------------
    def manifest(self) -> dict:
        return {
            "schema_version": DATASET_SCHEMA_VERSION,
            "type": "LoggedDataset",
            "behavior_policy_name": self.behavior_policy_name,
            "mdp_fingerprint": self.mdp_fingerprint,
            "seed": int(self.seed),
            "discount": self.discount,
            "n_trajectories": self.n_trajectories,
            "horizon": self.horizon,
            "action_type": self.action_type,
            "trajectory_file": "trajectories.jsonl",
        }

    def trajectory_lines(self) -> list[str]:
        keys = ("state", "action", "reward", "next_state", "behavior_propensity")
        arrays = [getattr(self, k).tolist() for k in keys]
        return [
            canonical_json({k: arr[i] for k, arr in zip(keys, arrays)})
            for i in range(self.n_trajectories)
        ]

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "trajectories.jsonl").write_text("\n".join(self.trajectory_lines()) + "\n")
        (directory / "manifest.json").write_text(json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n")
        return directory

    @classmethod
    def load(cls, directory) -> "LoggedDataset":
        directory = Path(directory)
        meta = json.loads((directory / "manifest.json").read_text())
        if meta.get("schema_version") != DATASET_SCHEMA_VERSION:
            raise ArgumentError("unsupported dataset schema version")
        rows = [json.loads(line) for line in (directory / meta["trajectory_file"]).read_text().splitlines() if line]
        cols = {k: [r[k] for r in rows] for k in ("state", "action", "reward", "next_state", "behavior_propensity")}
        ds = cls(
            **cols,
            behavior_policy_name=meta["behavior_policy_name"],
            mdp_fingerprint=meta["mdp_fingerprint"],
            seed=meta["seed"],
            discount=meta["discount"],
            action_type=meta["action_type"],
        )
        if ds.state.shape != (meta["n_trajectories"], meta["horizon"]):
            raise ArgumentError("trajectory file does not match the manifest shape")
        return ds


def _rollout(mdp: MdpSpec, policy: TabularPolicy, n: int, rng: np.random.Generator):
    T = mdp.horizon
    S = np.empty((n, T), dtype=np.int64)
    A = np.empty((n, T), dtype=np.int64)
    R = np.empty((n, T))
    S2 = np.empty((n, T), dtype=np.int64)
    s = _sample_rows(np.broadcast_to(mdp.initial_dist, (n, mdp.n_states)), rng)
    for t in range(T):
        a = _sample_rows(policy.probs[s], rng)
        R[:, t] = sample_rewards(mdp, s, a, rng)
        s_next = _sample_rows(mdp.transition[s, a], rng)
        S[:, t], A[:, t], S2[:, t] = s, a, s_next
        s = s_next
    return S, A, R, S2


def collect(mdp: MdpSpec, behavior: TabularPolicy, n_trajectories: int, seed: int) -> LoggedDataset:
    """Roll out ``behavior`` for ``n_trajectories`` episodes and log propensities."""
    _check_dims(mdp, behavior)
    if n_trajectories < 1:
        raise ArgumentError("n_trajectories must be >= 1")
    S, A, R, S2 = _rollout(mdp, behavior, n_trajectories, _rng(seed))
    return LoggedDataset(
        S, A, R, S2, behavior.probs[S, A], behavior.name,
        mdp.fingerprint(), int(seed), mdp.discount,
    )


def collect_multi(mdp: MdpSpec, behaviors: Sequence[TabularPolicy], n_datasets: int,
                  n_trajectories: int, seed: int) -> list[LoggedDataset]:
    """Datasets for every (behavior, dataset index) cell, behavior-major order.

    Cell ``(b, d)`` is collected with ``derive_seed(seed, b, d)``.
    """
    if not behaviors:
        raise ArgumentError("need at least one behavior policy")
    if n_datasets < 1:
        raise ArgumentError("n_datasets must be >= 1")
    return [
        collect(mdp, behavior, n_trajectories, derive_seed(seed, b, d))
        for b, behavior in enumerate(behaviors)
        for d in range(n_datasets)
    ]


def on_policy_value(mdp: MdpSpec, policy: TabularPolicy, n_trajectories: int,
                    seed: int, discount: Optional[float] = None) -> tuple[float, float]:
    """Monte-Carlo mean and standard error of the discounted return.

    ``discount`` overrides the MDP discount when given; 0 is accepted and
    scores the first reward only.
    """
    _check_dims(mdp, policy)
    if n_trajectories < 2:
        raise ArgumentError("need at least 2 rollouts for a standard error")
    gamma = mdp.discount if discount is None else float(discount)
    if not 0.0 <= gamma <= 1.0:
        raise ArgumentError("discount must lie in [0, 1]")
    _, _, R, _ = _rollout(mdp, policy, n_trajectories, _rng(seed))
    returns = R @ (gamma ** np.arange(mdp.horizon))
    return float(returns.mean()), float(returns.std(ddof=1) / np.sqrt(n_trajectories))


def collect_continuous(mdp: ContinuousActionMdpSpec, behavior: GaussianPolicy,
                       n_trajectories: int, seed: int) -> LoggedDataset:
    """Continuous-action logging; the propensity is the behavior density at the action."""
    if n_trajectories < 1:
        raise ArgumentError("n_trajectories must be >= 1")
    rng = _rng(seed)
    n, T = n_trajectories, mdp.horizon
    S = np.empty((n, T), dtype=np.int64)
    A = np.empty((n, T))
    S2 = np.empty((n, T), dtype=np.int64)
    s = _sample_rows(np.broadcast_to(mdp.initial_dist, (n, mdp.n_states)), rng)
    for t in range(T):
        a = np.atleast_1d(behavior.sample(s, rng))
        s_next = _sample_rows(mdp.bin_transition[s, mdp.action_bin(a)], rng)
        S[:, t], A[:, t], S2[:, t] = s, a, s_next
        s = s_next
    doc = {
        "reward_intercept": mdp.reward_intercept.tolist(),
        "reward_slope": mdp.reward_slope.tolist(),
        "bin_transition": mdp.bin_transition.tolist(),
        "initial_dist": mdp.initial_dist.tolist(),
        "horizon": mdp.horizon, "discount": mdp.discount,
        "action_low": mdp.action_low, "action_high": mdp.action_high,
    }
    fp = hashlib.sha256(canonical_json(doc).encode()).hexdigest()
    return LoggedDataset(
        S, A, mdp.reward(S, A), S2, behavior.density(S, A), behavior.name,
        fp, int(seed), mdp.discount, action_type="continuous",
    )

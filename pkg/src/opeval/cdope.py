"""Cumulative distribution OPE and the risk functionals derived from a CDF.

The return ``G = sum_t gamma^t r_t`` is binned on a fixed threshold grid
``m_0 < ... < m_P``. Cell 0 holds ``G <= m_0``, cell ``j`` holds
``m_{j-1} < G <= m_j`` and cell ``P + 1`` holds everything above ``m_P``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import LoggedDataset
from .errors import ArgumentError, ConfigurationError, ContractError
from .mdp import MdpSpec, TabularPolicy, _check_dims
from .ope.inputs import OpeInputs

CDF_ESTIMATORS = ("dm", "tis", "tdr", "sn_tis", "sn_tdr")
QUANTILE_TOL = 1e-12


@dataclass(frozen=True)
class RewardGrid:
    scale_min: float = 0.0
    scale_max: float = 10.0
    n_partition: int = 20

    def __post_init__(self):
        if not self.scale_min < self.scale_max:
            raise ArgumentError("scale_min must be below scale_max")
        if self.n_partition < 1:
            raise ArgumentError("n_partition must be >= 1")

    @property
    def thresholds(self) -> np.ndarray:
        return np.linspace(self.scale_min, self.scale_max, self.n_partition + 1)

    @property
    def step(self) -> float:
        return (self.scale_max - self.scale_min) / self.n_partition

    def cell_index(self, returns) -> np.ndarray:
        """Cell of each return (0 .. n_partition + 1)."""
        return np.searchsorted(self.thresholds, np.asarray(returns, dtype=float), side="left")

    def indicator(self, returns) -> np.ndarray:
        """``I{G_i <= m_j}`` as an (n, n_partition + 1) float array."""
        return (np.asarray(returns, dtype=float)[:, None] <= self.thresholds[None, :]).astype(float)

    def to_dict(self) -> dict:
        return {"scale_min": self.scale_min, "scale_max": self.scale_max, "n_partition": self.n_partition}


@dataclass(frozen=True, eq=False)
class CdfEstimate:
    grid: RewardGrid
    values: np.ndarray
    estimator_name: str
    corrected: bool
    raw_values: Optional[np.ndarray] = None
    warnings: tuple = ()

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if v.shape != self.grid.thresholds.shape:
            raise ArgumentError("CDF values must have one entry per grid threshold")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def require_corrected(self) -> None:
        if not self.corrected:
            raise ContractError("risk functionals need a corrected CDF (see monotone_correct)")

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator_name,
            "grid": self.grid.to_dict(),
            "thresholds": self.grid.thresholds.tolist(),
            "values": self.values.tolist(),
            "raw_values": None if self.raw_values is None else np.asarray(self.raw_values).tolist(),
            "corrected": self.corrected,
            "warnings": list(self.warnings),
        }


@dataclass(frozen=True, eq=False)
class CdfRewardModel:
    """Conditional return CDFs ``G(m; s0, a0)``, shape (S, A, n_partition + 1)."""

    grid: RewardGrid
    cdf: np.ndarray
    source: str = "fitted"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.array(self.cdf, dtype=float, copy=True)
        if c.ndim != 3 or c.shape[2] != len(self.grid.thresholds):
            raise ArgumentError("model cdf must be (S, A, n_thresholds)")
        if (np.diff(c, axis=2) < -1e-12).any() or c.min() < -1e-12 or c.max() > 1 + 1e-12:
            raise ArgumentError("every conditional CDF must be nondecreasing within [0, 1]")
        c.setflags(write=False)
        object.__setattr__(self, "cdf", c)


# -- models -------------------------------------------------------------------
def fit_cdf_reward_model(dataset: LoggedDataset, eval_policy: TabularPolicy, grid: RewardGrid) -> CdfRewardModel:
    """Importance-weighted empirical return CDFs grouped by the first (s, a).

    Within a group, returns are weighted by ``w_{1:T-1}`` (self-normalized)
    so the model targets the evaluation policy after its first step. Cell
    masses get add-one smoothing over cells 0..n_partition; mass above the
    grid is kept unsmoothed, so ``G(m_P) = 1`` whenever no return exceeds the grid.
    """
    S, A = eval_policy.probs.shape
    P = grid.n_partition
    ratio = eval_policy.probs[dataset.state, dataset.action] / dataset.behavior_propensity
    w_tail = np.prod(ratio[:, 1:], axis=1)
    cells = grid.cell_index(dataset.returns)
    group = dataset.state[:, 0] * A + dataset.action[:, 0]
    n_g = np.bincount(group, minlength=S * A).astype(float)
    w_sum = np.bincount(group, weights=w_tail, minlength=S * A)
    scale = np.divide(n_g, w_sum, out=np.zeros_like(n_g), where=w_sum > 0)
    mass = np.zeros((S * A, P + 2))
    np.add.at(mass, (group, cells), w_tail * scale[group])
    counts = mass.copy()
    counts[:, : P + 1] += 1.0
    probs = counts / counts.sum(axis=1, keepdims=True)
    cdf = np.minimum(np.cumsum(probs[:, : P + 1], axis=1), 1.0)
    return CdfRewardModel(grid, cdf.reshape(S, A, P + 1), "fitted",
                          {"group_counts": n_g.reshape(S, A).tolist()})


def exact_return_distribution(mdp: MdpSpec, policy: TabularPolicy, s0: Optional[int] = None,
                              a0: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
    """Support and probabilities of the discounted return under deterministic rewards.

    Enumerates trajectories by forward propagation of (state, return) pairs.
    ``s0``/``a0`` condition on the first state and action.
    """
    _check_dims(mdp, policy)
    if mdp.reward_noise.kind != "none":
        raise ArgumentError("exact return enumeration needs noise-free rewards")
    S, A = mdp.n_states, mdp.n_actions
    init = np.zeros(S)
    if s0 is None:
        init[:] = mdp.initial_dist
    else:
        init[s0] = 1.0
    frontier = {(s, 0.0): p for s, p in enumerate(init) if p > 0}
    for t in range(mdp.horizon):
        disc = mdp.discount ** t
        nxt: dict = {}
        for (s, G), p in frontier.items():
            if t == 0 and a0 is not None:
                acts = {a0: 1.0}
            else:
                acts = {a: q for a, q in enumerate(policy.probs[s]) if q > 0}
            for a, pa in acts.items():
                G2 = round(G + disc * mdp.reward_mean[s, a], 12)
                for s2 in np.flatnonzero(mdp.transition[s, a]):
                    key = (int(s2), G2)
                    nxt[key] = nxt.get(key, 0.0) + p * pa * mdp.transition[s, a, s2]
        frontier = nxt
    out: dict = {}
    for (_, G), p in frontier.items():
        out[G] = out.get(G, 0.0) + p
    support = np.array(sorted(out))
    return support, np.array([out[g] for g in support])


def distribution_cdf(support, probs, grid: RewardGrid) -> np.ndarray:
    """``F(m_j) = sum_k p_k I{G_k <= m_j}``."""
    return np.minimum(grid.indicator(support).T @ np.asarray(probs, dtype=float), 1.0)


def oracle_cdf_reward_model(mdp: MdpSpec, eval_policy: TabularPolicy, grid: RewardGrid) -> CdfRewardModel:
    S, A = mdp.n_states, mdp.n_actions
    cdf = np.empty((S, A, len(grid.thresholds)))
    for s in range(S):
        for a in range(A):
            cdf[s, a] = distribution_cdf(*exact_return_distribution(mdp, eval_policy, s, a), grid)
    return CdfRewardModel(grid, cdf, "oracle")


# -- estimation ---------------------------------------------------------------
def monotone_correct(raw, estimator_kind: str) -> np.ndarray:
    """Running maximum, then ``min(., 1)`` (IS family) or ``clip(., 0, 1)`` (DM/DR family)."""
    run = np.maximum.accumulate(np.asarray(raw, dtype=float))
    if estimator_kind in ("tis", "sn_tis"):
        return np.minimum(run, 1.0)
    if estimator_kind in ("dm", "tdr", "sn_tdr"):
        return np.clip(run, 0.0, 1.0)
    raise ArgumentError(f"unknown estimator kind {estimator_kind!r}")


def estimate_cdf(inputs: OpeInputs, grid: RewardGrid, estimator: str,
                 model: Optional[CdfRewardModel] = None) -> CdfEstimate:
    """Raw and corrected CDF of the return under the evaluation policy.

    When every logged return lies at or below the top threshold the corrected
    value there is set to 1 (the grid covers the support); otherwise a warning
    is attached.
    """
    if estimator not in CDF_ESTIMATORS:
        raise ArgumentError(f"estimator must be one of {CDF_ESTIMATORS}")
    ds, pi = inputs.dataset, inputs.eval_policy
    returns = ds.returns
    n = inputs.n
    if estimator in ("dm", "tdr", "sn_tdr"):
        if model is None:
            raise ConfigurationError(f"CD-{estimator.upper()} needs a CdfRewardModel")
        if model.grid != grid:
            raise ArgumentError("model grid differs from the requested grid")
        s0 = ds.state[:, 0]
        f_dm = np.einsum("ia,iam->m", pi.probs[s0], model.cdf[s0]) / n
    if estimator == "dm":
        raw = f_dm
    else:
        w = inputs.cumulative_weights()[:, -1]
        if estimator.startswith("sn_"):
            if w.sum() <= 0:
                raise ArgumentError("all trajectory weights are zero; self-normalization undefined")
            w = w * (n / w.sum())
        ind = grid.indicator(returns)
        if estimator == "tis":
            raw = w @ ind / n
        elif estimator == "sn_tis":
            # a convex combination of indicators; the clamp only absorbs rounding
            raw = np.minimum(w @ ind / n, 1.0)
        else:
            g_logged = model.cdf[ds.state[:, 0], ds.action[:, 0]]
            raw = w @ (ind - g_logged) / n + f_dm
    values = monotone_correct(raw, estimator)
    warnings = ()
    if returns.max() <= grid.scale_max:
        values[-1] = 1.0
    else:
        warnings = (f"returns up to {returns.max():.6g} exceed the grid maximum {grid.scale_max}",)
    return CdfEstimate(grid, values, f"CD-{estimator.upper()}", True, raw, warnings)


# -- risk functionals ---------------------------------------------------------
def cdf_atoms(cdf: CdfEstimate) -> tuple[np.ndarray, np.ndarray]:
    """Stieltjes atoms: ``F(m_0)`` at ``m_0``, increments at cell midpoints, residual at ``m_max``."""
    cdf.require_corrected()
    m = cdf.grid.thresholds
    F = cdf.values
    loc = np.concatenate([[m[0]], 0.5 * (m[:-1] + m[1:]), [m[-1]]])
    mass = np.concatenate([[F[0]], np.diff(F), [1.0 - F[-1]]])
    return loc, mass


def cdf_mean_variance(cdf: CdfEstimate) -> tuple[float, float]:
    loc, mass = cdf_atoms(cdf)
    mean = float(mass @ loc)
    return mean, float(mass @ (loc - mean) ** 2)


def _quantile_index(cdf: CdfEstimate, alpha: float) -> int:
    hit = np.flatnonzero(cdf.values >= alpha - QUANTILE_TOL)
    return int(hit[0]) if hit.size else len(cdf.values) - 1


def cdf_quantile(cdf: CdfEstimate, alpha: float) -> float:
    """Smallest threshold with ``F(m) >= alpha`` (top threshold if none)."""
    cdf.require_corrected()
    if not 0.0 < alpha < 1.0:
        raise ArgumentError("alpha must lie in (0, 1)")
    return float(cdf.grid.thresholds[_quantile_index(cdf, alpha)])


def cdf_cvar(cdf: CdfEstimate, alpha: float, normalized: bool = True) -> float:
    """Lower-tail expectation up to the alpha-quantile.

    ``normalized=False`` returns the bare tail integral ``int G I{G <= Q} dF``.
    """
    if not 0.0 < alpha <= 1.0:
        raise ArgumentError("alpha must lie in (0, 1]")
    loc, mass = cdf_atoms(cdf)
    j = _quantile_index(cdf, alpha)
    upto = j + 1
    if j == len(cdf.values) - 1:
        upto += 1   # the residual atom sits at the top threshold
    tail_loc, tail_mass = loc[:upto], mass[:upto]
    integral = float(tail_mass @ tail_loc)
    if not normalized:
        return integral
    total = float(tail_mass.sum())
    if total <= 0:
        raise ArgumentError("zero probability mass in the lower tail")
    return integral / total


def cdf_interquartile(cdf: CdfEstimate, alpha: float) -> tuple[float, float, float]:
    if not 0.0 < alpha < 0.5:
        raise ArgumentError("alpha must lie in (0, 0.5)")
    return cdf_quantile(cdf, alpha), cdf_quantile(cdf, 0.5), cdf_quantile(cdf, 1.0 - alpha)


def true_cdf(mdp: MdpSpec, policy: TabularPolicy, grid: RewardGrid) -> CdfEstimate:
    """Exact CDF on the grid from return enumeration."""
    F = monotone_correct(distribution_cdf(*exact_return_distribution(mdp, policy), grid), "dm")
    return CdfEstimate(grid, F, "oracle", True, F.copy())


def cdf_rows(estimates: list[CdfEstimate]) -> list[dict]:
    """One row per threshold with a column per estimator."""
    if not estimates:
        return []
    m = estimates[0].grid.thresholds
    return [{"threshold": float(m[j]), **{e.estimator_name: float(e.values[j]) for e in estimates}}
            for j in range(len(m))]

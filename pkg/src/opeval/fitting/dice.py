"""Augmented-Lagrangian (DICE family) weight learning with tabular parameters.

The empirical objective, maximized over ``w >= 0`` and minimized over ``Q``
and ``lambda``, is

    L(w, Q, lam) = c0 * E_{s0, a0 ~ pi}[Q(s0, a0)] + lam
                   + sum_i nu_i w(x_i) (alpha_r r_i + gamma m_i V_Q(s'_i) - Q(x_i) - lam)
                   + alpha_Q sum_i nu_i Q(x_i)^2 - alpha_w sum_i nu_i w(x_i)^2

with ``V_Q(s) = sum_a pi(a|s) Q(s, a)`` and tuple weights ``nu``, bootstrap
masks ``m`` and initial coefficient ``c0`` from :func:`build_tuples`.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..data import LoggedDataset
from ..errors import ArgumentError, ConvergenceError
from ..mdp import TabularPolicy
from ._tuples import Tuples, build_tuples
from .fqe import FittedQ
from .weights import MarginalWeights, state_weights_from_pairs

_DIVERGENCE = 1e6


@dataclass(frozen=True)
class AlmHyperparams:
    alpha_w: float = 1.0
    alpha_q: float = 0.0
    alpha_r: int = 1
    lambda_mode: str = "optimize"
    lambda_value: float = 0.0
    lr_w: float = 0.05
    lr_q: float = 0.05
    lr_lambda: float = 0.01
    max_iters: int = 20_000
    tolerance: float = 1e-5
    horizon_mode: str = "episodic"

    def __post_init__(self):
        if self.alpha_w < 0 or self.alpha_q < 0:
            raise ArgumentError("alpha_w and alpha_q must be nonnegative")
        if self.alpha_r not in (0, 1):
            raise ArgumentError("alpha_r must be 0 or 1")
        if self.lambda_mode not in ("fixed", "optimize"):
            raise ArgumentError("lambda_mode must be 'fixed' or 'optimize'")
        if self.max_iters < 0:
            raise ArgumentError("max_iters must be >= 0")

    @classmethod
    def best_dice(cls, **kw) -> "AlmHyperparams":
        return cls(alpha_w=1.0, alpha_q=0.0, alpha_r=1, lambda_mode="optimize", **kw)

    @classmethod
    def dual_dice(cls, **kw) -> "AlmHyperparams":
        return cls(alpha_w=0.0, alpha_q=1.0, alpha_r=0, lambda_mode="fixed", lambda_value=0.0, **kw)

    @classmethod
    def gen_dice(cls, **kw) -> "AlmHyperparams":
        return cls(alpha_w=0.0, alpha_q=1.0, alpha_r=0, lambda_mode="optimize", **kw)

    @classmethod
    def gradient_dice(cls, **kw) -> "AlmHyperparams":
        return cls(alpha_w=0.0, alpha_q=1.0, alpha_r=0, lambda_mode="optimize", **kw)

    @classmethod
    def algae_dice(cls, **kw) -> "AlmHyperparams":
        return cls(alpha_w=1.0, alpha_q=0.0, alpha_r=1, lambda_mode="fixed", lambda_value=0.0, **kw)

    @classmethod
    def mql_mwl(cls, **kw) -> "AlmHyperparams":
        return cls(alpha_w=0.0, alpha_q=0.0, alpha_r=0, lambda_mode="fixed", lambda_value=0.0, **kw)

    def table_row(self) -> tuple:
        """(alpha_w, alpha_Q, alpha_r, lambda) with lambda ``"optimize"`` when learned."""
        lam = "optimize" if self.lambda_mode == "optimize" else self.lambda_value
        return (self.alpha_w, self.alpha_q, self.alpha_r, lam)

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS = {
    "BestDICE": AlmHyperparams.best_dice,
    "DualDICE": AlmHyperparams.dual_dice,
    "GenDICE": AlmHyperparams.gen_dice,
    "GradientDICE": AlmHyperparams.gradient_dice,
    "AlgaeDICE": AlmHyperparams.algae_dice,
    "MQL/MWL": AlmHyperparams.mql_mwl,
}


@dataclass(frozen=True, eq=False)
class _AlmStats:
    """Per-(s, a) sufficient statistics of the empirical objective."""

    D: np.ndarray        # sum of nu over tuples at x
    Rw: np.ndarray       # sum of nu * r
    N: np.ndarray        # (SA, S) sum of nu * mask into each next state
    mu0: np.ndarray      # flat initial state-action distribution
    pi: np.ndarray
    c0: float
    gamma: float


def _alm_stats(tup: Tuples, pi: np.ndarray) -> _AlmStats:
    SA = tup.n_pairs
    D = np.bincount(tup.x, weights=tup.nu, minlength=SA)
    Rw = np.bincount(tup.x, weights=tup.nu * tup.r, minlength=SA)
    N = np.zeros((SA, tup.n_states))
    np.add.at(N, (tup.x, tup.s_next), tup.nu * tup.mask)
    return _AlmStats(D, Rw, N, tup.mu0.ravel(), pi, tup.init_coef, tup.gamma)


def alm_objective(tup: Tuples, hp: AlmHyperparams, w: np.ndarray, Q: np.ndarray, lam: float) -> float:
    """Evaluate ``L`` tuple by tuple (no aggregation)."""
    w, Q = np.ravel(w), np.ravel(Q)
    A = tup.n_actions
    v_next = (tup.next_pi * Q.reshape(-1, A)[tup.s_next]).sum(axis=1)
    resid = hp.alpha_r * tup.r + tup.gamma * tup.mask * v_next - Q[tup.x] - lam
    return float(
        tup.init_coef * (tup.mu0.ravel() @ Q)
        + lam
        + np.sum(tup.nu * w[tup.x] * resid)
        + hp.alpha_q * np.sum(tup.nu * Q[tup.x] ** 2)
        - hp.alpha_w * np.sum(tup.nu * w[tup.x] ** 2)
    )


def _gradients(st: _AlmStats, hp: AlmHyperparams, w: np.ndarray, Q: np.ndarray, lam: float):
    S, A = st.pi.shape
    V = (st.pi * Q.reshape(S, A)).sum(axis=1)
    g_w = hp.alpha_r * st.Rw + st.gamma * st.N @ V - st.D * Q - lam * st.D - 2 * hp.alpha_w * st.D * w
    inflow = st.N.T @ w                      # mass flowing into each next state
    g_q = st.c0 * st.mu0 + st.gamma * (inflow[:, None] * st.pi).ravel() - st.D * w + 2 * hp.alpha_q * st.D * Q
    g_lam = 1.0 - st.D @ w
    return g_w, g_q, g_lam


def alm_gradients(tup: Tuples, hp: AlmHyperparams, w, Q, lam: float, pi: np.ndarray):
    """Analytic ``(dL/dw, dL/dQ, dL/dlambda)`` from aggregated statistics."""
    return _gradients(_alm_stats(tup, pi), hp, np.ravel(w), np.ravel(Q), lam)


def fit_alm(dataset: LoggedDataset, eval_policy: TabularPolicy, hp: AlmHyperparams,
            seed: int = 0) -> tuple[MarginalWeights, FittedQ, float]:
    """Projected simultaneous gradient ascent (``w``) / descent (``Q``, ``lambda``).

    Starts from ``w = 1, Q = 0, lambda = lambda_value`` and stops when the
    projected gradient sup-norm drops below ``hp.tolerance`` or after
    ``hp.max_iters`` steps. ``seed`` is recorded only; the iteration is
    deterministic.
    """
    if dataset.discount >= 1.0:
        raise ArgumentError("ALM fitting needs discount < 1")
    tup = build_tuples(dataset, eval_policy, hp.horizon_mode)
    st = _alm_stats(tup, eval_policy.probs)
    S, A = eval_policy.probs.shape
    SA = S * A
    optimize_lam = hp.lambda_mode == "optimize"
    # the gradient is affine in z = (w, Q, lambda): g(z) = G z + g0
    def stacked(z):
        g_w, g_q, g_lam = _gradients(st, hp, z[:SA], z[SA:2 * SA], z[-1])
        return np.concatenate([g_w, g_q, [g_lam]])

    g0 = stacked(np.zeros(2 * SA + 1))
    G = np.column_stack([stacked(e) - g0 for e in np.eye(2 * SA + 1)])
    step = np.concatenate([np.full(SA, hp.lr_w), np.full(SA, -hp.lr_q), [-hp.lr_lambda if optimize_lam else 0.0]])
    z = np.concatenate([np.ones(SA), np.zeros(SA), [float(hp.lambda_value)]])
    grad_norm = np.inf
    it = 0
    for it in range(1, hp.max_iters + 1):
        g = G @ z + g0
        if not np.isfinite(g).all():
            raise ConvergenceError("NaN encountered in ALM gradients")
        g_w = g[:SA]
        active_w = np.where((z[:SA] <= 0) & (g_w < 0), 0.0, g_w)
        grad_norm = max(np.abs(active_w).max(), np.abs(g[SA:2 * SA]).max(), abs(g[-1]) if optimize_lam else 0.0)
        if grad_norm < hp.tolerance:
            break
        z = z + step * g
        np.maximum(z[:SA], 0.0, out=z[:SA])
        if it % 100 == 0:
            obj = _objective_from_stats(st, hp, z[:SA], z[SA:2 * SA], z[-1])
            if not np.isfinite(obj) or abs(obj) > _DIVERGENCE:
                raise ConvergenceError("ALM objective diverged", abs(obj))
    else:
        it = hp.max_iters
    w, Q, lam = z[:SA], z[SA:2 * SA], float(z[-1])
    obj = _objective_from_stats(st, hp, w, Q, lam)
    log = {
        "iterations": it, "grad_sup_norm": float(grad_norm) if hp.max_iters else None,
        "objective": obj, "lambda": lam, "hyperparams": hp.to_dict(), "seed": int(seed),
    }
    rho_sa = w.reshape(S, A)
    weights = MarginalWeights(state_weights_from_pairs(rho_sa, st.D.reshape(S, A)), rho_sa, "alm", log)
    return weights, FittedQ(Q.reshape(S, A), dict(log, source="alm")), lam


def _objective_from_stats(st: _AlmStats, hp: AlmHyperparams, w, Q, lam) -> float:
    S, A = st.pi.shape
    V = (st.pi * Q.reshape(S, A)).sum(axis=1)
    return float(
        st.c0 * st.mu0 @ Q + lam
        + w @ (hp.alpha_r * st.Rw + st.gamma * st.N @ V - st.D * Q - lam * st.D)
        + hp.alpha_q * st.D @ Q ** 2 - hp.alpha_w * st.D @ w ** 2
    )


def preset(name: str, **overrides) -> AlmHyperparams:
    try:
        return PRESETS[name](**overrides)
    except KeyError:
        raise ArgumentError(f"unknown ALM preset {name!r}; choose from {sorted(PRESETS)}") from None


__all__ = ["AlmHyperparams", "PRESETS", "alm_gradients", "alm_objective", "fit_alm", "preset"]

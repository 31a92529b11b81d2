"""Kernel minimax weight (MWL) and Q-function (MQL) learning, tabular parameters.

State-action pairs are embedded as one-hot vectors and compared with a
Gaussian kernel, so ``K(x, y) = 1`` for equal pairs and ``exp(-1 / h^2)``
otherwise. Next-step actions are integrated out under the evaluation
policy, which keeps every kernel evaluation a bilinear form in (s, a) space.
Data-data pair terms use the U-statistic (self pairs removed).
"""
from __future__ import annotations

import numpy as np

from ..data import LoggedDataset
from ..errors import ArgumentError, ConvergenceError
from ..mdp import TabularPolicy
from ._tuples import Tuples, build_tuples
from .fqe import FittedQ
from .weights import MarginalWeights, state_weights_from_pairs

MAX_TUPLES = 5000


def gaussian_onehot_kernel(n_pairs: int, bandwidth: float) -> np.ndarray:
    if not bandwidth > 0:
        raise ArgumentError("kernel bandwidth must be positive")
    off = np.exp(-1.0 / bandwidth ** 2)   # squared distance between distinct one-hots is 2
    K = np.full((n_pairs, n_pairs), off)
    np.fill_diagonal(K, 1.0)
    return K


class _Problem:
    """Precomputed matrices for both objectives."""

    def __init__(self, tup: Tuples, bandwidth: float):
        self.tup = tup
        self.K = gaussian_onehot_kernel(tup.n_pairs, bandwidth)
        E = tup.onehot()
        self.Dm = tup.next_embedding() - E                     # rows d_i
        self.M = E.T @ (tup.nu[:, None] * self.Dm)             # sum_i nu_i e(x_i) d_i^T
        self.g0 = E.T @ (tup.nu * tup.r)
        self.nu2 = tup.nu ** 2
        self.c = 1.0 - self.nu2.sum()
        self.b = tup.init_coef * tup.mu0.ravel()
        self.E = E


def _descend(grad, value, hess_max: float, x0: np.ndarray, nonneg: bool,
             tolerance: float, max_iters: int):
    """Accelerated (projected) gradient descent with step ``1 / hess_max``."""
    step = 1.0 / hess_max
    x = x0.copy()
    y = x.copy()
    t = 1.0
    g_norm = np.inf
    for it in range(1, max_iters + 1):
        g = grad(y)
        if not np.isfinite(g).all():
            raise ConvergenceError("NaN encountered in minimax gradients")
        x_new = y - step * g
        if nonneg:
            x_new = np.maximum(x_new, 0.0)
        gx = grad(x_new)
        proj = np.where(nonneg & (x_new <= 0) & (gx > 0), 0.0, gx) if nonneg else gx
        g_norm = float(np.abs(proj).max())
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        y = x_new + ((t - 1) / t_new) * (x_new - x)
        x, t = x_new, t_new
        if g_norm < tolerance:
            return x, it, g_norm
        if it % 100 == 0:
            v = value(x)
            if not np.isfinite(v) or abs(v) > 1e6:
                raise ConvergenceError("minimax objective diverged", abs(v))
            if (x - y) @ g > 0:   # restart momentum when it stops helping
                y, t = x.copy(), 1.0
    return x, max_iters, g_norm


def mql_objective(prob: _Problem, Q: np.ndarray) -> float:
    delta = prob.tup.r + prob.Dm @ Q
    g = prob.E.T @ (prob.tup.nu * delta)
    return float((g @ prob.K @ g - prob.nu2 @ delta ** 2) / prob.c)


def mwl_objective(prob: _Problem, w: np.ndarray) -> float:
    m = prob.M.T @ w
    self_terms = prob.nu2 @ (w[prob.tup.x] ** 2 * np.einsum("ij,jk,ik->i", prob.Dm, prob.K, prob.Dm))
    return float((m @ prob.K @ m - self_terms) / prob.c + 2 * prob.b @ prob.K @ m + prob.b @ prob.K @ prob.b)


def fit_minimax_kernel(dataset: LoggedDataset, eval_policy: TabularPolicy, mode: str,
                       kernel_bandwidth: float = 1.0, seed: int = 0, *,
                       horizon_mode: str | None = None, tolerance: float = 1e-8,
                       max_iters: int = 50_000, max_tuples: int = MAX_TUPLES):
    """Minimize the MWL (``mode="weight"``) or MQL (``mode="value"``) loss.

    ``horizon_mode`` defaults to ``"episodic"`` for weights (matching the
    discount-averaged occupancy ratio) and ``"continuing"`` for values
    (stationary Bellman residual). Returns :class:`MarginalWeights` or
    :class:`FittedQ`.
    """
    if mode not in ("weight", "value"):
        raise ArgumentError("mode must be 'weight' (MWL) or 'value' (MQL)")
    if dataset.state.size > max_tuples:
        raise ArgumentError(
            f"{dataset.state.size} tuples exceed the pairwise budget of {max_tuples}; "
            "subsample trajectories (e.g. dataset.subset(range(k))) before fitting"
        )
    if horizon_mode is None:
        horizon_mode = "episodic" if mode == "weight" else "continuing"
    tup = build_tuples(dataset, eval_policy, horizon_mode)
    prob = _Problem(tup, kernel_bandwidth)
    S, A = eval_policy.probs.shape
    log = {"mode": mode, "bandwidth": kernel_bandwidth, "horizon_mode": horizon_mode, "seed": int(seed)}

    if mode == "value":
        H = 2 * (prob.M.T @ prob.K @ prob.M - prob.Dm.T @ (prob.nu2[:, None] * prob.Dm)) / prob.c

        def grad(Q):
            delta = tup.r + prob.Dm @ Q
            g = prob.g0 + prob.M @ Q
            return 2 * (prob.M.T @ prob.K @ g - prob.Dm.T @ (prob.nu2 * delta)) / prob.c

        x0 = np.zeros(S * A)
        value = lambda Q: mql_objective(prob, Q)  # noqa: E731
    else:
        s_diag = np.bincount(tup.x, weights=prob.nu2 * np.einsum("ij,jk,ik->i", prob.Dm, prob.K, prob.Dm),
                             minlength=tup.n_pairs)
        KM = prob.K @ prob.M.T
        H = 2 * (prob.M @ KM - np.diag(s_diag)) / prob.c
        lin = 2 * prob.M @ prob.K @ prob.b

        def grad(w):
            return H @ w + lin

        x0 = np.ones(S * A)
        value = lambda w: mwl_objective(prob, w)  # noqa: E731

    eig = np.linalg.eigvalsh(0.5 * (H + H.T))
    if eig[0] < -1e-10 * max(1.0, eig[-1]):
        raise ConvergenceError("kernel loss is unbounded below for this data; lower the bandwidth or add data",
                               float(eig[0]))
    x, iters, g_norm = _descend(grad, value, max(eig[-1], 1e-12), x0, mode == "weight", tolerance, max_iters)
    log.update(iterations=iters, grad_sup_norm=g_norm, objective=value(x))
    if mode == "value":
        return FittedQ(x.reshape(S, A), dict(log, source="mql"))
    D = np.bincount(tup.x, weights=tup.nu, minlength=tup.n_pairs).reshape(S, A)
    rho_sa = x.reshape(S, A)
    return MarginalWeights(state_weights_from_pairs(rho_sa, D), rho_sa, "mwl", log)

"""Kernel-smoothed importance weights for one-dimensional continuous actions."""
from __future__ import annotations

from typing import Callable

import numpy as np
from scipy import integrate

from ..data import LoggedDataset
from ..errors import ArgumentError
from ..mdp import GaussianPolicy
from .inputs import PointEstimate

N_NODES = 1025
GAUSSIAN_REACH = 8.0


def gaussian_kernel(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)


def epanechnikov_kernel(x):
    x = np.asarray(x, dtype=float)
    return np.where(np.abs(x) <= 1, 0.75 * (1 - x * x), 0.0)


def triangular_kernel(x):
    x = np.asarray(x, dtype=float)
    return np.where(np.abs(x) <= 1, 1 - np.abs(x), 0.0)


def cosine_kernel(x):
    x = np.asarray(x, dtype=float)
    return np.where(np.abs(x) <= 1, 0.25 * np.pi * np.cos(0.5 * np.pi * x), 0.0)


def uniform_kernel(x):
    x = np.asarray(x, dtype=float)
    return np.where(np.abs(x) <= 1, 0.5, 0.0)


KERNELS: dict[str, Callable] = {
    "gaussian": gaussian_kernel,
    "epanechnikov": epanechnikov_kernel,
    "triangular": triangular_kernel,
    "cosine": cosine_kernel,
    "uniform": uniform_kernel,
}


def kernel_support(kernel: str) -> float:
    """Half-width (in bandwidth units) outside which the kernel is treated as zero."""
    if kernel not in KERNELS:
        raise ArgumentError(f"unknown kernel {kernel!r}; choose from {sorted(KERNELS)}")
    return GAUSSIAN_REACH if kernel == "gaussian" else 1.0


def kernel_smoothed_weight(eval_density: Callable, behavior_density, logged_action, bandwidth: float,
                           kernel: str = "gaussian", low: float = -1.0, high: float = 1.0) -> np.ndarray:
    """``int pi(a) / pi_b(a_t) * K((a - a_t) / h) / h da`` over ``[low, high]``.

    ``eval_density`` maps an (m, N) array of actions to ``pi(a | s_t)`` for the
    N logged steps (column j belongs to step j). Integration is composite
    Simpson on :data:`N_NODES` nodes over the kernel window clipped to the
    action interval.
    """
    if not bandwidth > 0:
        raise ArgumentError("bandwidth must be positive")
    a_t = np.atleast_1d(np.asarray(logged_action, dtype=float))
    b = np.broadcast_to(np.asarray(behavior_density, dtype=float), a_t.shape)
    if not (b > 0).all():
        raise ArgumentError("behavior density must be positive")
    reach = kernel_support(kernel) * bandwidth
    K = KERNELS[kernel]
    lo = np.maximum(low, a_t - reach)
    hi = np.minimum(high, a_t + reach)
    u = np.linspace(0.0, 1.0, N_NODES)[:, None]
    grid = lo + u * (hi - lo)                                   # (m, N)
    # nodes lie inside the window by construction; the clip only undoes rounding at its edges
    x = np.clip((grid - a_t) / bandwidth, -kernel_support(kernel), kernel_support(kernel))
    integrand = eval_density(grid) * K(x) / bandwidth
    mass = integrate.simpson(integrand, x=grid, axis=0)
    return np.where(hi > lo, mass, 0.0) / b


def smoothed_step_weights(dataset: LoggedDataset, eval_policy: GaussianPolicy, bandwidth: float,
                          kernel: str = "gaussian") -> np.ndarray:
    """Smoothed weights ``w_bar_t`` for every logged step, shape (n, T)."""
    if dataset.action_type != "continuous":
        raise ArgumentError("smoothed weights need a continuous-action dataset")
    s = dataset.state.ravel()

    def density(grid):
        return eval_policy.density(np.broadcast_to(s, grid.shape), grid)

    w = kernel_smoothed_weight(density, dataset.behavior_propensity.ravel(), dataset.action.ravel(),
                               bandwidth, kernel, eval_policy.low, eval_policy.high)
    return w.reshape(dataset.state.shape)


def estimate_pdis_continuous(dataset: LoggedDataset, eval_policy: GaussianPolicy, bandwidth: float,
                             kernel: str = "gaussian", self_normalized: bool = False) -> PointEstimate:
    """Per-decision importance sampling with kernel-smoothed step weights."""
    w = np.cumprod(smoothed_step_weights(dataset, eval_policy, bandwidth, kernel), axis=1)
    if self_normalized:
        total = w.sum(axis=0)
        if np.any(total <= 0):
            raise ArgumentError("all smoothed weights vanish at some step")
        w = w * (w.shape[0] / total)
    per_traj = (w * dataset.reward) @ dataset.discounts
    return PointEstimate.from_contributions(per_traj, "SNPDIS" if self_normalized else "PDIS")

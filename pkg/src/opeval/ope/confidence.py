"""High-confidence intervals from per-trajectory estimator values."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from ..data import _rng
from ..errors import ArgumentError
from .inputs import OpeInputs

METHODS = ("hoeffding", "empirical_bernstein", "ttest", "bootstrap")
J_MAX_MODES = ("data_max", "analytic")


@dataclass(frozen=True)
class ConfidenceInterval:
    lower: float
    upper: float
    alpha: float
    method: str
    center: float
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise ArgumentError("interval lower bound exceeds upper bound")

    @property
    def radius(self) -> float:
        return 0.5 * (self.upper - self.lower)


def hoeffding_radius(n: int, alpha: float, j_max: float) -> float:
    return j_max * np.sqrt(np.log(1.0 / alpha) / (2.0 * n))


def bernstein_radius(n: int, alpha: float, j_max: float, sample_var: float) -> float:
    log_term = np.log(2.0 / alpha)
    return 7.0 * j_max * log_term / (3.0 * (n - 1)) + np.sqrt(2.0 * sample_var * log_term / (n - 1))


def ttest_radius(n: int, alpha: float, sigma: float) -> float:
    return stats.t.ppf(1.0 - alpha, n - 1) * sigma / np.sqrt(n)


def analytic_j_max(inputs: OpeInputs, r_max: float) -> float:
    """``r_max * sum_t gamma^t * max_{i, t} w_{0:t}``."""
    return float(r_max * inputs.discounts.sum() * inputs.cumulative_weights().max())


def confidence_interval(values, method: str = "hoeffding", alpha: float = 0.05,
                        j_max_mode: str = "data_max", j_max: Optional[float] = None,
                        bootstrap_b: int = 100, seed: int = 0) -> ConfidenceInterval:
    """Interval around the mean of ``values`` holding with probability ``1 - alpha``.

    ``j_max_mode="data_max"`` bounds the values by ``max |v_i|``; ``"analytic"``
    uses the caller-provided ``j_max`` (see :func:`analytic_j_max`).
    """
    v = np.asarray(values, dtype=float)
    n = v.size
    if n < 2:
        raise ArgumentError("need at least two per-trajectory values")
    if not 0.0 < alpha < 1.0:
        raise ArgumentError("alpha must lie in (0, 1)")
    if method not in METHODS:
        raise ArgumentError(f"method must be one of {METHODS}")
    center = float(v.mean())
    meta: dict = {}
    if method in ("hoeffding", "empirical_bernstein"):
        if j_max_mode == "data_max":
            bound = float(np.abs(v).max())
        elif j_max_mode == "analytic":
            if j_max is None or not np.isfinite(j_max):
                raise ArgumentError("analytic j_max_mode needs a finite j_max")
            bound = float(j_max)
        else:
            raise ArgumentError(f"j_max_mode must be one of {J_MAX_MODES}")
        meta["j_max"] = bound
        if method == "hoeffding":
            r = hoeffding_radius(n, alpha, bound)
        else:
            r = bernstein_radius(n, alpha, bound, float(v.var(ddof=1)))
        return ConfidenceInterval(center - r, center + r, alpha, method, center, meta)
    if method == "ttest":
        sigma = float(v.std(ddof=1))
        r = ttest_radius(n, alpha, sigma) if sigma > 0 else 0.0
        return ConfidenceInterval(center - r, center + r, alpha, method, center, meta)
    if bootstrap_b < 1:
        raise ArgumentError("bootstrap_b must be >= 1")
    idx = _rng(seed).integers(0, n, size=(bootstrap_b, n))
    means = v[idx].mean(axis=1)
    lo, hi = np.quantile(means, [alpha / 2, 1 - alpha / 2])
    meta["bootstrap_b"] = bootstrap_b
    return ConfidenceInterval(float(lo), float(hi), alpha, method, center, meta)

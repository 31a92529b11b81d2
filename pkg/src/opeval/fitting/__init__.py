"""Nuisance fitting: fitted Q evaluation and marginal importance weights."""
from .dice import PRESETS, AlmHyperparams, alm_gradients, alm_objective, fit_alm, preset
from .fqe import FittedQ, empirical_model, fit_fqe
from .minimax import fit_minimax_kernel
from .weights import (
    MarginalWeights,
    empirical_marginal_weights,
    empirical_occupancy,
    oracle_marginal_weights,
)

__all__ = [
    "PRESETS", "AlmHyperparams", "FittedQ", "MarginalWeights", "alm_gradients", "alm_objective",
    "empirical_marginal_weights", "empirical_model", "empirical_occupancy", "fit_alm", "fit_fqe",
    "fit_minimax_kernel", "oracle_marginal_weights", "preset",
]

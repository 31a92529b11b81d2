"""Standard point-estimate off-policy evaluation."""
from .confidence import ConfidenceInterval, confidence_interval
from .estimators import (
    ESTIMATORS,
    estimate_dm,
    estimate_dr,
    estimate_drl,
    estimate_pdis,
    estimate_sope,
    estimate_state_action_marginal,
    estimate_state_marginal,
    estimate_tis,
    run_estimator,
    sope_weight_schedule,
)
from .inputs import OpeInputs, PointEstimate

__all__ = [
    "ESTIMATORS", "ConfidenceInterval", "OpeInputs", "PointEstimate", "confidence_interval",
    "estimate_dm", "estimate_dr", "estimate_drl", "estimate_pdis", "estimate_sope",
    "estimate_state_action_marginal", "estimate_state_marginal", "estimate_tis",
    "run_estimator", "sope_weight_schedule",
]

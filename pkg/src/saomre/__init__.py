"""Stochastic actor-oriented network dynamics with actor-level random effects.

Simulation of tie-change processes on directed networks, method-of-moments
estimation with dispersion targets for the random part, score-type tests,
a penalized model-comparison criterion, and distribution-based fit checks.
"""

from .effects import (
    EFFECT_KINDS,
    EffectDef,
    ModelSpec,
    TargetStatistics,
    target_statistics,
)
from .engine import (
    ParameterPoint,
    SimOutcome,
    point_from_vector,
    simulate_period,
)
from .errors import (
    CollinearityError,
    DegeneracyError,
    DivergenceError,
    SaomreError,
    ValidationError,
)
from .estimator import (
    EstimationResult,
    EstimationSettings,
    MonitorPlan,
    MonteCarloSummaries,
    Phase2Schedule,
    convergence_check,
    estimate,
    phase1_precondition,
    phase2,
    phase3,
)
from .inference import (
    CovarianceReport,
    GofReport,
    OrthogonalizedTest,
    PscReport,
    composite_score_test,
    gof,
    psc,
    reparametrize_to_sd,
    score_test_overdispersion,
    standard_errors,
)
from .networks import Network, PanelData, hamming_distance, load_panel, save_network

__version__ = "0.1.0"

__all__ = [
    "EFFECT_KINDS",
    "CollinearityError",
    "CovarianceReport",
    "DegeneracyError",
    "DivergenceError",
    "EffectDef",
    "EstimationResult",
    "EstimationSettings",
    "GofReport",
    "ModelSpec",
    "MonitorPlan",
    "MonteCarloSummaries",
    "Network",
    "OrthogonalizedTest",
    "PanelData",
    "ParameterPoint",
    "Phase2Schedule",
    "PscReport",
    "SaomreError",
    "SimOutcome",
    "TargetStatistics",
    "ValidationError",
    "composite_score_test",
    "convergence_check",
    "estimate",
    "gof",
    "hamming_distance",
    "load_panel",
    "phase1_precondition",
    "phase2",
    "phase3",
    "point_from_vector",
    "psc",
    "reparametrize_to_sd",
    "save_network",
    "score_test_overdispersion",
    "simulate_period",
    "standard_errors",
    "target_statistics",
    "__version__",
]

"""Wiener disorder detection when every observation of the process has a price."""

from .jump_operator import (
    QuadratureRule,
    TimeSearchConfig,
    ValueFunction,
    apply_J,
    expectation_after_observation,
    gauss_hermite_rule,
    j0_cost,
    minimize_over_t,
)
from .model import (
    ModelParams,
    likelihood_j,
    posterior_after_observation,
    posterior_drift,
    stop_now_cost,
    stop_now_optimizer,
)
from .simulator import (
    PathSample,
    RiskEstimate,
    StrategyOutcome,
    estimate_risk,
    never_policy,
    periodic_policy,
    run_strategy,
    sample_path,
)
from .solver import (
    ConvergenceError,
    Policy,
    SolveResult,
    continuation_region,
    extract_policy,
    pi_star_sequence,
    value_iteration,
)

__version__ = "0.1.0"

__all__ = [
    "QuadratureRule",
    "TimeSearchConfig",
    "ValueFunction",
    "apply_J",
    "expectation_after_observation",
    "gauss_hermite_rule",
    "j0_cost",
    "minimize_over_t",
    "ModelParams",
    "likelihood_j",
    "posterior_after_observation",
    "posterior_drift",
    "stop_now_cost",
    "stop_now_optimizer",
    "PathSample",
    "RiskEstimate",
    "StrategyOutcome",
    "estimate_risk",
    "never_policy",
    "periodic_policy",
    "run_strategy",
    "sample_path",
    "ConvergenceError",
    "Policy",
    "SolveResult",
    "continuation_region",
    "extract_policy",
    "pi_star_sequence",
    "value_iteration",
]

"""Smooth exact penalty functions for equality-constrained problems over a box."""

from .diagnostics import (
    calmness_from_below,
    empirical_lambda_threshold,
    estimate_lipschitz,
    estimate_subregularity,
    exactness_experiment,
    exponent_condition,
    optimal_value_samples,
    theoretical_lambda_bound,
)
from .expr import ExprTree, eval_with_grad, evaluate, parse, to_source
from .penalty import (
    Family,
    PenaltyConfig,
    PenaltyEval,
    Region,
    classify_region,
    delta,
    monotone_in_lambda_check,
    penalty_gradient,
    penalty_value,
)
from .problem import (
    CORPUS,
    BoxBounds,
    Problem,
    distance_to_feasible,
    feasible,
    get_corpus,
    jacobian,
    load_problem,
    residual,
)
from .solver import SolveResult, SolveSettings, minimize, multi_start, project

__version__ = "0.1.0"

__all__ = [
    "ExprTree",
    "SolveResult",
    "SolveSettings",
    "eval_with_grad",
    "evaluate",
    "minimize",
    "multi_start",
    "parse",
    "project",
    "BoxBounds",
    "CORPUS",
    "Family",
    "PenaltyConfig",
    "PenaltyEval",
    "Problem",
    "Region",
    "calmness_from_below",
    "classify_region",
    "delta",
    "distance_to_feasible",
    "empirical_lambda_threshold",
    "estimate_lipschitz",
    "estimate_subregularity",
    "exactness_experiment",
    "exponent_condition",
    "feasible",
    "get_corpus",
    "jacobian",
    "load_problem",
    "monotone_in_lambda_check",
    "optimal_value_samples",
    "penalty_gradient",
    "penalty_value",
    "residual",
    "theoretical_lambda_bound",
    "to_source",
]

"""Regime-switching optimal liquidation laboratory.

Solves the coupled backward Riccati system of the penalized execution
problem, builds the blow-up solution of the constrained problem as the
limit of a penalization ladder sandwiched by closed-form bounds, and
verifies the control characterization (value identity, feedback
optimality, full liquidation) by Monte Carlo simulation.
"""

from .errors import (
    AssumptionViolated,
    DimensionMismatch,
    DomainError,
    MonotonicityViolation,
    NegativeOffDiagonal,
    OutOfGrid,
    OutOfHorizon,
    RegliqError,
    RowSumNonzero,
    SchemaError,
    ToleranceFailure,
)
from .model import (
    CoefficientSet,
    MarkMeasure,
    MarketModel,
    RegimeGenerator,
    build_model,
    coefficient_at,
    load_model,
    validate_generator,
)
from .driver import DriverInput, dark_pool_term, driver_eval, inf_representation
from .truncated_solver import (
    LadderResult,
    TimeGrid,
    TruncatedSolution,
    closed_form_lower,
    closed_form_single_regime,
    closed_form_upper,
    closed_form_upper_path,
    grid_for_model,
    make_grid,
    solve_ladder,
    solve_truncated,
)
from .singular_solver import (
    BoundsEnvelope,
    SingularSolution,
    blowup_profile,
    bounds_envelope,
    extrapolate_singular,
    verify_sandwich,
)
from .simulate import (
    ClosedFormSurface,
    FillEvents,
    RegimePath,
    StatePath,
    evolve_state,
    feedback_controls,
    penalized_cost,
    product_formula_path,
    sample_fills,
    sample_regime_path,
)
from .montecarlo import (
    MCReport,
    estimate_value,
    martingale_check,
    penalized_monotone_check,
    policy_suboptimality,
    quadratic_scaling_check,
    scenario_rng,
)

__version__ = "0.1.0"

__all__ = [
    "AssumptionViolated",
    "BoundsEnvelope",
    "ClosedFormSurface",
    "CoefficientSet",
    "DimensionMismatch",
    "DomainError",
    "DriverInput",
    "FillEvents",
    "LadderResult",
    "MCReport",
    "MarkMeasure",
    "MarketModel",
    "MonotonicityViolation",
    "NegativeOffDiagonal",
    "OutOfGrid",
    "OutOfHorizon",
    "RegimeGenerator",
    "RegimePath",
    "RegliqError",
    "RowSumNonzero",
    "SchemaError",
    "SingularSolution",
    "StatePath",
    "TimeGrid",
    "ToleranceFailure",
    "TruncatedSolution",
    "blowup_profile",
    "bounds_envelope",
    "build_model",
    "closed_form_lower",
    "closed_form_single_regime",
    "closed_form_upper",
    "closed_form_upper_path",
    "coefficient_at",
    "dark_pool_term",
    "driver_eval",
    "estimate_value",
    "evolve_state",
    "extrapolate_singular",
    "feedback_controls",
    "grid_for_model",
    "inf_representation",
    "load_model",
    "make_grid",
    "martingale_check",
    "penalized_cost",
    "penalized_monotone_check",
    "policy_suboptimality",
    "product_formula_path",
    "quadratic_scaling_check",
    "sample_fills",
    "sample_regime_path",
    "scenario_rng",
    "solve_ladder",
    "solve_truncated",
    "validate_generator",
    "verify_sandwich",
]

"""Double-shrinkage estimation for fusing unbiased and biased effect vectors.

Public surface: domain types and the estimator (``core``), hyperparameter
fitting backends (``hyper``), prior-art comparison estimators
(``competitors``), robust empirical-Bayes intervals (``inference``), the
seeded simulation harness (``simharness``), and the CLI (``cli``).
"""

__version__ = "0.1.0"

from .competitors import (
    delta1,
    delta2,
    delta_homoscedastic,
    kappa1,
    kappa2,
    precision_weighted,
)
from .core import (
    EstimatePair,
    FitMethod,
    Hyperparams,
    LatentTruth,
    ShrinkageWeights,
    apply_weights,
    compute_weights,
    shrink,
    squared_error_loss,
)
from .errors import (
    AggregationError,
    ConfigurationError,
    DegenerateInputError,
    DegenerateInputWarning,
    HomoscedasticApproximationWarning,
    InputValidationError,
    ShrinkageError,
    SolverError,
)
from .hyper import (
    BoundaryCase,
    MleSolution,
    UreOptions,
    UreSolution,
    fit_mle,
    fit_mm1,
    fit_mm2,
    fit_ure,
    marginal_loglik,
    ure,
    ure_given_weights,
)
from .inference import (
    CvaTable,
    IntervalSet,
    compute_ck,
    cva,
    noncoverage,
    rho,
    robust_intervals,
    truncate_hyperparams,
)
from .simharness import (
    MethodStats,
    SimConfig,
    SimResult,
    StratumSummary,
    aggregate_units,
    bootstrap_eval,
    evaluate_coverage,
    evaluate_risk,
    generate,
    pair_from_summaries,
)

__all__ = [
    "__version__",
    "AggregationError",
    "BoundaryCase",
    "ConfigurationError",
    "CvaTable",
    "DegenerateInputError",
    "DegenerateInputWarning",
    "EstimatePair",
    "FitMethod",
    "HomoscedasticApproximationWarning",
    "Hyperparams",
    "InputValidationError",
    "IntervalSet",
    "LatentTruth",
    "MethodStats",
    "MleSolution",
    "ShrinkageError",
    "ShrinkageWeights",
    "SimConfig",
    "SimResult",
    "SolverError",
    "StratumSummary",
    "UreOptions",
    "UreSolution",
    "aggregate_units",
    "apply_weights",
    "bootstrap_eval",
    "compute_ck",
    "compute_weights",
    "cva",
    "delta1",
    "delta2",
    "delta_homoscedastic",
    "evaluate_coverage",
    "evaluate_risk",
    "fit_mle",
    "fit_mm1",
    "fit_mm2",
    "fit_ure",
    "generate",
    "kappa1",
    "kappa2",
    "marginal_loglik",
    "noncoverage",
    "pair_from_summaries",
    "precision_weighted",
    "rho",
    "robust_intervals",
    "shrink",
    "squared_error_loss",
    "truncate_hyperparams",
    "ure",
    "ure_given_weights",
]

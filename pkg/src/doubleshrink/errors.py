"""Exception and warning types shared across the package."""


class ShrinkageError(Exception):
    """Base class for all package-specific errors."""


class InputValidationError(ShrinkageError, ValueError):
    """Malformed or inconsistent inputs (dimensions, signs, non-finite values)."""


class DegenerateInputError(ShrinkageError, ValueError):
    """Inputs on which an estimator is undefined (e.g. zero difference vector)."""


class ConfigurationError(ShrinkageError, ValueError):
    """A precondition on configuration was violated (e.g. untruncated eta2=0)."""


class AggregationError(ShrinkageError, ValueError):
    """Unit-level data cannot be summarized; the message names the offending cell."""


class SolverError(ShrinkageError, RuntimeError):
    """A numerical solver failed to converge.

    Carries the best iterate found so far in ``best`` (shape depends on the
    solver) so callers can inspect or salvage it.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class DegenerateInputWarning(UserWarning):
    """An estimator hit a degenerate configuration and fell back to a default."""


class HomoscedasticApproximationWarning(UserWarning):
    """A homoscedastic-only estimator was run on heteroscedastic variances."""

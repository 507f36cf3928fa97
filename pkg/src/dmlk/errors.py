"""Exception types raised across the package."""


class DmlkError(Exception):
    """Base class for all package errors."""


class NotPositiveDefiniteError(DmlkError):
    def __init__(self, pivot_index, pivot_value):
        self.pivot_index = pivot_index
        self.pivot_value = pivot_value
        super().__init__(
            f"matrix is not positive definite: pivot {pivot_index} = {pivot_value!r}"
        )


class SpecError(DmlkError):
    """Invalid design, learner or estimator parameters."""


class DegenerateScoreError(DmlkError):
    """Residual treatment variation is zero, so the score Jacobian vanishes."""


class ConvergenceError(DmlkError):
    def __init__(self, message, coef=None, kkt_violation=None):
        self.coef = coef
        self.kkt_violation = kkt_violation
        super().__init__(message)


class FitError(DmlkError):
    """A nuisance learner failed; ``fold`` names the held-out fold if known."""

    def __init__(self, message, fold=None):
        self.fold = fold
        if fold is not None:
            message = f"fold {fold}: {message}"
        super().__init__(message)


class ConfigError(DmlkError):
    """Experiment configuration failed validation."""


class DataError(DmlkError):
    """Malformed input data (CSV ingestion, schema mismatch)."""

"""Exception taxonomy shared across the package."""


class DuotiltError(Exception):
    """Base class for all package errors."""


class ParameterDomainError(DuotiltError):
    """A tilt parameter lies outside the model's admissible domain."""


class NumericOverflowError(DuotiltError):
    """A state or weight term became non-finite during simulation."""

    def __init__(self, message, step=None):
        if step is not None:
            message = f"{message} (at step {step})"
        super().__init__(message)
        self.step = step


class ContractError(DuotiltError):
    """Incompatible arguments, e.g. an event paired with the wrong path."""


class UnsupportedOracleError(DuotiltError):
    """The brute-force oracle cannot handle this chain/event combination."""


class SearchFailedError(DuotiltError):
    """Stage-1 search made no progress (typically: no event hits)."""


class NoEigenSolutionError(DuotiltError):
    """The affine eigen fixed point did not converge."""


class BracketError(DuotiltError):
    """Quantile bisection could not bracket the target level."""


class ConditioningTooRareError(DuotiltError):
    """The conditioning event probability is below the supported floor."""


class ValidationError(DuotiltError):
    """Invalid configuration or model specification."""


class ZeroHitWarning(UserWarning):
    """A sampling batch contained no event hits; the estimate is uninformative."""

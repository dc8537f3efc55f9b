"""Exception hierarchy shared by every module."""


class DkfError(Exception):
    """Base class for all errors raised by dkfkit."""


class InvalidCovarianceError(DkfError, ValueError):
    """A matrix that must be symmetric positive definite is not."""


class UnstableDynamicsError(DkfError, ValueError):
    """State transition matrix has spectral radius >= 1."""

    def __init__(self, message, spectral_radius=None):
        super().__init__(message)
        self.spectral_radius = spectral_radius


class NumericalFailureError(DkfError, ArithmeticError):
    """A factorization or normalization failed during filtering."""


class DivergenceError(NumericalFailureError):
    """An iterative procedure left the region of sane values."""

    def __init__(self, message, last_stable=None):
        super().__init__(message)
        self.last_stable = last_stable


class WeightCollapseError(NumericalFailureError):
    """Every particle received zero likelihood."""


class InvalidDiscriminativeModelError(DkfError, ValueError):
    """q(x) returned a matrix that is not symmetric positive definite."""


class DegenerateModelError(DkfError, ValueError):
    """The observation model assigns zero mass to an observation."""


class InsufficientDataError(DkfError, ValueError):
    """Too few samples to fit the requested estimator."""


class FitError(DkfError, RuntimeError):
    """Fitting failed at every candidate hyperparameter."""


class ConfigError(DkfError, ValueError):
    """Malformed experiment configuration."""


class CoverageError(DkfError, ValueError):
    """A grid does not cover the support of a density."""


class NormalizationError(DkfError, ValueError):
    """A normalizing quantity is zero."""


class UndefinedMetricError(DkfError, ValueError):
    """A metric has no valid rows to average over."""

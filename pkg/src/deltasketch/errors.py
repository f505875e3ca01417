"""Exception types shared across the package."""


class DeltaSketchError(Exception):
    """Base class for package-specific failures."""


class ConfigError(DeltaSketchError):
    """Invalid or inconsistent run configuration."""


class DataError(DeltaSketchError):
    """Dataset could not be loaded or violates its contract."""


class NumericError(DeltaSketchError):
    """A numeric procedure failed in a detectable way."""


class SvdConvergenceError(NumericError):
    """The SVD backend did not converge."""

    def __init__(self, message, detail=None):
        super().__init__(message)
        self.detail = detail


class TrainingDivergedError(NumericError):
    """Training produced a non-finite loss.  Carries the epoch index."""

    def __init__(self, message, epoch):
        super().__init__(message)
        self.epoch = epoch


class DegreesOfFreedomError(NumericError):
    """n - p* is not positive; intervals would be meaningless."""


class SingularCovarianceError(NumericError):
    """The parameter covariance is singular (lambda = lambda_n = 0 with a
    zero singular value)."""


class ExactSizeError(ConfigError):
    """The exact covariance path was requested for a problem above its
    size gate."""

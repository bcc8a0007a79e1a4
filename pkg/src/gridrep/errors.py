"""Exception types shared across the package."""


class GridrepError(Exception):
    """Base class for all package errors."""


class ConfigurationError(GridrepError):
    """Invalid configuration value (bad dimension, kernel scale, schema key, ...)."""


class DecodeDomainError(GridrepError):
    """A position fell outside the domain mask during encoding."""


class LookupError_(GridrepError):
    """A nonparametric motion matrix was requested for an unknown displacement."""


class DegenerateMapError(GridrepError):
    """A response map has no variance, so correlation analysis is undefined."""


class GridnessUndefinedError(GridrepError):
    """No surrounding peaks were found in an autocorrelogram."""


class DegenerateQueryError(GridrepError):
    """An attention query produced an all-zero weight vector."""


class WeightFormatError(GridrepError):
    """A weight file or its sidecar header is corrupt or inconsistent."""


class TrainingDivergedError(GridrepError):
    """The training loss became non-finite; carries the iteration and term breakdown."""

    def __init__(self, iteration: int, breakdown: dict):
        self.iteration = iteration
        self.breakdown = breakdown
        terms = ", ".join(f"{k}={v:.6g}" for k, v in breakdown.items())
        super().__init__(f"non-finite loss at iteration {iteration}: {terms}")

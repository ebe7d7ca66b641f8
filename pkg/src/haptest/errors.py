"""Exception types raised across the pipeline."""


class HaptestError(Exception):
    """Base class for all package errors."""


class SimulationDivergence(HaptestError, FloatingPointError):
    """The contact simulation produced a non-finite state."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class EstimatorDivergence(HaptestError, FloatingPointError):
    """The dual EKF propagated a non-finite estimate or covariance."""

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class SingularUpdateError(HaptestError, ArithmeticError):
    """Innovation covariance could not be inverted."""


class DegenerateImpactError(HaptestError, ValueError):
    """Impact momentum too small to form a restitution ratio."""


class NoImpactError(HaptestError, ValueError):
    """No contact onset (or no velocity reversal) found in a tap."""


class EmptySeriesError(HaptestError, ValueError):
    """A trial would produce no samples."""


class TrialFailure(HaptestError, RuntimeError):
    """A trial failed; carries the context needed to reproduce it."""

    def __init__(self, message, label=None, action=None, seed=None, cause=None):
        super().__init__(message)
        self.label = label
        self.action = action
        self.seed = seed
        self.cause = cause


class CampaignFailure(HaptestError, RuntimeError):
    """More than the tolerated fraction of trials failed."""

    def __init__(self, message, failures=()):
        super().__init__(message)
        self.failures = list(failures)


class IncompleteTupleError(HaptestError, ValueError):
    """A feature tuple is missing one of the exploration actions."""


class FeatureError(HaptestError, ValueError):
    """Feature extraction precondition violated."""


class ConfigError(HaptestError, ValueError):
    """Invalid experiment configuration; ``path`` names the offending field."""

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path

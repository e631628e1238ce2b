"""Exception and warning types raised across the package."""


class FedStatError(Exception):
    """Base class for all package errors."""


class InsufficientData(FedStatError):
    """A nonempty group holds fewer than ``k`` observations."""

    def __init__(self, message, center_id=None):
        super().__init__(message)
        self.center_id = center_id


class EmptyCenter(FedStatError):
    pass


class EmptyGroup(FedStatError):
    pass


class DegenerateWeights(FedStatError):
    """A positive total cannot be split over weights that sum to zero."""


class ZeroVarianceError(FedStatError):
    """Every contributing center has zero null variance."""


class TooFewBins(FedStatError):
    pass


class DegenerateVariance(FedStatError):
    pass


class OutOfRange(FedStatError):
    """Value outside the image of the Yeo-Johnson transform."""


class PrivacyViolation(FedStatError):
    """Request refused because the method releases raw values."""


class ZeroVariance(RuntimeWarning):
    """Per-center MWU variance is zero (all pooled values tied)."""


class ZeroPValue(RuntimeWarning):
    """A p-value of exactly zero was clamped before log-combination."""

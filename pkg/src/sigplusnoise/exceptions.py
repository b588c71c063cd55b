"""Exception hierarchy shared by every module."""


class SigPlusNoiseError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(SigPlusNoiseError, ValueError):
    """Non-conformable, non-square or asymmetric input."""


class SpecError(SigPlusNoiseError, ValueError):
    """Invalid model, scenario or criterion specification."""


class NotPSDError(SigPlusNoiseError, ValueError):
    """Matrix has an eigenvalue below the PSD tolerance."""


class NumericError(SigPlusNoiseError, ArithmeticError):
    """An iterative solver failed to converge or hit a singular system."""


class DomainError(SigPlusNoiseError, ValueError):
    """Argument lies outside the domain where the quantity is defined."""


class PoleError(DomainError):
    """Evaluation point coincides with a pole (an atom of the measure)."""


class RootIsolationError(NumericError):
    """A bracket failed to produce a sign change."""


class DegenerateSpectrumError(SigPlusNoiseError, ValueError):
    """Coincident population eigenvalues where distinct ones are required."""


class ClassificationError(SigPlusNoiseError, ValueError):
    """A spike required to be distant is close (or vice versa)."""


class IntegrationError(NumericError):
    """Density quadrature captured the wrong amount of mass."""


class ReplicationError(SigPlusNoiseError, RuntimeError):
    """A Monte Carlo replication failed; carries the replication seed."""

    def __init__(self, message, replication=None, seed=None):
        super().__init__(message)
        self.replication = replication
        self.seed = seed

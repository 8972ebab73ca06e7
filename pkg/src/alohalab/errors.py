"""Exceptions raised by alohalab."""


class AlohaLabError(Exception):
    """Base class for errors specific to this package."""


class DomainError(AlohaLabError, ValueError):
    """An argument lies outside the domain of an operation."""


class SingularityError(DomainError):
    """A series over an unbounded number of phases diverges.

    This happens with exponential backoff when p + q <= 1, where the mean
    service time of a head-of-line packet is infinite.

    """


class NoStablePointsError(DomainError):
    """The aggregate rate exceeds 1/e, so p = exp(-λ̂/p) has no root."""


class NoRootError(AlohaLabError, ArithmeticError):
    """No sign change was found to bracket a root."""


class OutputError(AlohaLabError, OSError):
    """A result file could not be written."""

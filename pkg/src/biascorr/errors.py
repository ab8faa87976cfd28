"""Exception hierarchy shared by every module in the package."""

from __future__ import annotations


class BiasCorrError(Exception):
    """Base class for all package errors."""


class NonConvergence(BiasCorrError):
    """Newton iterations hit ``max_iter`` without meeting a tolerance."""


class DomainExit(BiasCorrError):
    """The iterate left, or collapsed onto the edge of, the parameter domain."""


class SubfitFailure(BiasCorrError):
    """A subsample refit failed.

    Parameters
    ----------
    index : int
        Index of the failing subsample (left-out observation, split half,
        dropped period or bootstrap replicate).
    method : str
        Name of the correction that triggered the refit.
    """

    def __init__(self, index: int, method: str = "", detail: str = ""):
        self.index = index
        self.method = method
        msg = f"{method or 'subsample'} refit {index} failed"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class SingularInformation(BiasCorrError):
    """The sample information is numerically zero."""


class MissingExpectations(BiasCorrError):
    """The model does not provide the closed-form expectations required."""


class ScaleMismatch(BiasCorrError):
    """A bias estimate was applied to an estimate from the other setting."""


class DegenerateUnit(BiasCorrError):
    """A panel unit has (numerically) zero fixed-effect information."""


class UnsupportedOrder(BiasCorrError):
    """No closed form is available for the requested V-statistic order."""


class OddLength(BiasCorrError):
    """The split closed forms require an even number of observations."""


class ExcessFailures(BiasCorrError):
    """More than the allowed share of Monte Carlo replicates failed.

    The partial summary is attached so callers can still report it.
    """

    def __init__(self, message: str, summary=None):
        super().__init__(message)
        self.summary = summary


class ConfigError(BiasCorrError):
    """Invalid experiment configuration."""


class ParseError(BiasCorrError):
    """Unreadable or malformed input data."""


class SchemaMismatch(BiasCorrError):
    """CSV summaries with different columns were combined."""

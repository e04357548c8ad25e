"""Exception hierarchy.

Everything raised on bad input data derives from :class:`DataError`; the CLI
maps those to exit status 2.
"""


class VpBoundsError(Exception):
    """Base class for all package errors."""


class DataError(VpBoundsError, ValueError):
    """Input data is malformed or does not satisfy a precondition."""


class FeatureError(DataError):
    """A single input feature (polygon, CSV row) is invalid."""

    def __init__(self, index, reason):
        self.index = index
        self.reason = reason
        super().__init__(f"feature {index}: {reason}")


class DegeneratePolygonError(FeatureError):
    pass


class NoCandidateError(DataError):
    """No cell passes the candidate-centre constraint."""


class UnreachableFractionError(DataError):
    """The requested mass fraction cannot be enclosed."""


class TooFewPointsError(DataError):
    """A fitted segment covers too few profile points."""


class NonPositiveSlopeError(DataError):
    """A fitted segment has a slope that does not give an integrable density."""


class MaskedOutError(DataError):
    """Artifact masking removed every profile entry."""


class OutsideModelError(DataError):
    """Radius outside the support of a ring model."""


class RingExceedsGridError(DataError):
    """Synthetic city does not fit inside the requested grid."""


class BoxTooSmallError(DataError):
    """Last breakpoint radius lies outside the analysis box."""

"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes, so new error conditions
should subclass one of the categories below rather than raising bare
ValueError.
"""


class RegionRankError(Exception):
    """Base class for all package errors."""


class GeometryError(RegionRankError):
    """Invalid box geometry (zero or negative area, inverted corners)."""


class FormatError(RegionRankError):
    """A binary or structured file does not decode to the declared layout."""


class DataValidationError(RegionRankError):
    """Well-formed input that violates a semantic invariant."""


class ConfigError(RegionRankError):
    """Invalid or unknown configuration keys/values."""


class ConvergenceError(RegionRankError):
    """A solver produced non-finite values or failed to make progress."""


class DanglingNodeError(RegionRankError):
    """A zero-degree column was hit while normalizing the transition matrix.

    Only reachable with ``gamma == 0``; the rank-one perturbation otherwise
    guarantees strictly positive degrees.
    """


class MissingInputError(RegionRankError):
    """A required input file or prior pipeline stage output is absent."""

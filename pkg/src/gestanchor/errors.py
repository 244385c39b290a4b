"""Exception hierarchy shared across the package.

Three top-level families map onto the CLI exit codes: configuration
problems (2), data problems (3), and numeric failures (4).
"""


class GestAnchorError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(GestAnchorError):
    """Invalid, inconsistent, or incomplete configuration."""


class DataError(GestAnchorError):
    """Input data missing, malformed, or semantically unusable."""


class NumericError(GestAnchorError):
    """A numeric computation cannot proceed or produced garbage."""


class MalformedInput(DataError):
    """Structurally invalid in-memory input (wrong shape, bad values)."""


class ParseError(DataError):
    """A text input failed to parse; carries file/line context."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"line {line}: "
        super().__init__(where + message)


class OverlapError(DataError):
    """Phoneme intervals overlap beyond tolerance."""


class UnknownLabel(DataError):
    """A vowel-like phoneme label has no entry in the alias table."""


class NotNormalized(DataError):
    """Operation requires a normalized landmark sequence."""


class DegenerateFace(NumericError):
    """Inter-pupil distance too small to define the normalization frame."""


class DimensionMismatch(DataError):
    """Series or vectors disagree on their feature dimension."""


class NonFinite(NumericError):
    """NaN or infinity encountered where finite values are required."""


class EmptySet(DataError):
    """An operation over a collection received no members."""


class TooFewSamples(DataError):
    """Not enough samples for the requested model size."""


class InsufficientRange(ConfigError):
    """A parameter sweep range is too narrow to be meaningful."""


class ModelMismatch(DataError):
    """Assignment sets reference different cluster models."""


class EmptyCorpus(DataError):
    """An assignment set for a corpus is empty."""


class JoinError(DataError):
    """Sample identifiers do not line up across inputs."""


class UnknownCluster(DataError):
    """A cluster id is outside the fitted model's range."""


class EmptyBatch(DataError):
    """A loss was requested over an empty batch."""


class NoCommonClusters(DataError):
    """No cluster survives the cross-corpus share threshold."""


class MissingClass(DataError):
    """A metric requires every class to have support."""

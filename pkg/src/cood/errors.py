"""Exception hierarchy.

Two broad families map onto CLI exit codes: ``DataError`` (bad or
inconsistent input data, exit code 2) and ``ConfigError`` (invalid
parameters or options, exit code 3). ``InternalInconsistency`` signals an
implementation bug surfaced by a built-in cross-check and is never
expected in normal operation.
"""


class CoodError(Exception):
    """Base class for all errors raised by this package."""


class DataError(CoodError):
    """Input data is malformed, inconsistent, or unusable."""


class ConfigError(CoodError):
    """A parameter or option is out of its documented domain."""


class MalformedFile(DataError):
    """A file does not conform to its declared format or schema."""


class TruncatedFile(MalformedFile):
    """A binary file ended before its declared payload was complete."""


class NormViolation(DataError):
    """An embedding deviates from unit Euclidean norm beyond tolerance."""


class ShapeMismatch(DataError):
    """Array shapes are incompatible for the requested operation."""


class EmptyCandidates(DataError):
    """Mask competition was invoked with zero candidate masks."""


class ZeroMaskMass(DataError):
    """Masked pooling was invoked with (numerically) zero total mask mass."""


class MissingComponentEmbedding(DataError):
    """A required per-component visual embedding is absent from a record."""


class EmptyClassSet(DataError):
    """A posterior was requested over an empty class list."""


class EmptyScoreList(DataError):
    """A detection metric was requested over an empty score list."""


class EmptySet(DataError):
    """Keypoint matching was invoked with an empty keypoint set."""


class EmptyCoreset(DataError):
    """Reference selection was invoked with an empty coreset."""


class EmptyClass(DataError):
    """Coreset construction found a class with no training samples."""


class NoUsableClass(DataError):
    """Every class was skipped during compositional scoring."""


class InternalInconsistency(CoodError):
    """Two redundant computations of the same quantity disagree."""

"""Exception taxonomy shared across the package.

Every error raised on a data/contract violation derives from QbeError so the
CLI can map them to a dedicated exit code; unexpected exceptions stay distinct.
"""


class QbeError(Exception):
    """Base class for all errors raised by this package."""


# --- feature file format -------------------------------------------------

class FeatureFileError(QbeError):
    """Base for feature-file read/write failures."""


class MissingFeatureFileError(FeatureFileError):
    """The referenced feature file does not exist."""


class BadMagicError(FeatureFileError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersionError(FeatureFileError):
    """File declares a format version this reader does not understand."""


class TruncatedFileError(FeatureFileError):
    """File ends before the declared header/payload is complete."""


class NonFiniteValuesError(FeatureFileError):
    """Payload (or sequence to be written) contains NaN or Inf values."""


# --- manifests, spans, queries -------------------------------------------

class ManifestError(QbeError):
    """Corpus manifest violates an invariant (duplicate ids, bad spans, ...)."""


class EmptySliceError(QbeError):
    """A time span rounds to zero frames."""


class SpanOutOfRangeError(QbeError):
    """A time span extends past the end of the sequence."""


class QueryResolutionError(QbeError):
    """A QuerySpec cannot be resolved to a feature sequence."""


# --- geometry -------------------------------------------------------------

class ZeroNormError(QbeError):
    """A zero-norm vector reached a cosine computation."""


class UnsatisfiableStratumError(QbeError):
    """The corpus cannot supply pairs for the requested sampling stratum."""


class EmptyCorpusError(QbeError):
    """No frames available for the requested layer."""


# --- dtw search -----------------------------------------------------------

class DimensionMismatchError(QbeError):
    """Two feature sequences disagree on vector dimensionality."""


class MissingLayerError(QbeError):
    """One or more recordings lack features at the requested layer."""

    def __init__(self, layer, recording_ids):
        self.layer = layer
        self.recording_ids = tuple(recording_ids)
        ids = ", ".join(self.recording_ids)
        super().__init__(f"no features at layer {layer!r} for recordings: {ids}")


# --- retrieval evaluation -------------------------------------------------

class EmptyTargetWordError(QbeError):
    """A query's target word is empty after case folding."""


class InsufficientPoolError(QbeError):
    """The labeled pool cannot supply the requested protocol counts."""


# --- audio ----------------------------------------------------------------

class UnsupportedCodecError(QbeError):
    """WAV file uses a codec other than 16-bit PCM or 32-bit float."""


class MalformedWavError(QbeError):
    """WAV file header or payload cannot be parsed."""


class AudioTooShortError(QbeError):
    """Audio is shorter than one analysis window."""

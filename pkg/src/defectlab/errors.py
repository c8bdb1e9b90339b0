"""Exception hierarchy shared across the workbench."""

from __future__ import annotations


class DefectLabError(Exception):
    """Base class for all workbench errors."""


# --- dataset / manifest -------------------------------------------------


class StructureError(DefectLabError):
    """Dataset directory does not match the expected layout."""


class ClassCountError(StructureError):
    """A split directory does not contain exactly two class subdirectories."""


class EmptyDatasetError(DefectLabError):
    """No samples where at least one was required."""


class ParseError(DefectLabError):
    """Malformed manifest content; carries the offending 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DuplicateIdError(DefectLabError):
    """The same sample id appeared more than once."""


class MissingLabelError(DefectLabError):
    """A label was required but absent."""


class LabelPrecedenceError(DefectLabError):
    """An existing label would have been silently overwritten."""


class DecodeError(DefectLabError):
    """An image file could not be decoded; carries the sample id."""

    def __init__(self, message: str, sample_id: str | None = None):
        super().__init__(message)
        self.sample_id = sample_id


class IoError(DefectLabError):
    """A filesystem write or read failed."""


class NotFoundError(DefectLabError):
    """A referenced file, directory, or session does not exist."""


# --- numeric / model ----------------------------------------------------


class RangeError(DefectLabError):
    """A value fell outside its documented range."""


class ShapeError(DefectLabError):
    """Input collections had incompatible or empty shapes."""


class UndefinedMetricError(DefectLabError):
    """A metric is undefined for the given inputs (e.g. single-class AUC)."""


class BackboneUnavailableError(DefectLabError):
    """Pretrained backbone weights could not be obtained."""


class DivergenceError(DefectLabError):
    """Training produced a non-finite loss; carries the epoch index."""

    def __init__(self, message: str, epoch: int | None = None):
        if epoch is not None:
            message = f"epoch {epoch}: {message}"
        super().__init__(message)
        self.epoch = epoch


# --- persistence --------------------------------------------------------


class VersionError(DefectLabError):
    """Persisted artifact written by an incompatible format version."""


class ChecksumError(DefectLabError):
    """Persisted artifact failed its integrity check."""


class IntegrityError(DefectLabError):
    """Persisted state references a file that is missing or inconsistent."""


# --- active learning / service ------------------------------------------


class PoolExhaustedError(DefectLabError):
    """No unlabeled samples remain to select from."""


class BatchMismatchError(DefectLabError):
    """A label submission did not cover the pending batch exactly."""

    def __init__(self, message: str, missing: list[str] | None = None,
                 extra: list[str] | None = None):
        super().__init__(message)
        self.missing = missing or []
        self.extra = extra or []


class ConflictError(DefectLabError):
    """The requested transition is not valid in the session's current state."""


class EmptyResultError(DefectLabError):
    """A report was requested for an empty result set."""


class BindError(DefectLabError):
    """The service could not bind its host:port."""


class UsageError(DefectLabError):
    """Command-line flags were structurally valid but semantically unusable."""

"""Domain error types shared across the platform.

Every error carries a stable ``code`` string used by the REST layer for
machine-readable error bodies, and an optional ``field`` naming the input
that caused it.
"""

from __future__ import annotations


class ForecasterError(Exception):
    code = "error"

    def __init__(self, message: str = "", field: str | None = None):
        super().__init__(message or self.__class__.__name__)
        self.field = field

    @property
    def message(self) -> str:
        return str(self)


# --- dataset ingest ---------------------------------------------------------

class TooLarge(ForecasterError):
    code = "too_large"


class DuplicateName(ForecasterError):
    code = "duplicate_name"


class BadName(ForecasterError):
    code = "bad_name"


class Unparseable(ForecasterError):
    code = "unparseable"


class UnknownColumn(ForecasterError):
    code = "unknown_column"


class MixedKinds(ForecasterError):
    code = "mixed_kinds"


class NoTime(ForecasterError):
    code = "no_time"


class MultipleTime(ForecasterError):
    code = "multiple_time"


class NoTarget(ForecasterError):
    code = "no_target"


class MultipleGrouping(ForecasterError):
    code = "multiple_grouping"


class TypeMismatch(ForecasterError):
    code = "type_mismatch"


class TooShort(ForecasterError):
    code = "too_short"


class DuplicateTimestamps(ForecasterError):
    code = "duplicate_timestamps"


# --- series model -----------------------------------------------------------

class NonConstantStatic(ForecasterError):
    code = "non_constant_static"


class ExcessiveGaps(ForecasterError):
    code = "excessive_gaps"


class EmptyGroup(ForecasterError):
    code = "empty_group"


class TestTooLong(ForecasterError):
    code = "test_too_long"


class InitialTooLong(ForecasterError):
    code = "initial_too_long"


class BadStride(ForecasterError):
    code = "bad_stride"


class UnknownName(ForecasterError):
    code = "unknown_name"


# --- forecast models --------------------------------------------------------

class SeriesShorterThanK(ForecasterError):
    code = "series_shorter_than_k"


class NonFiniteLoss(ForecasterError):
    code = "non_finite_loss"


class TooFewWindows(ForecasterError):
    code = "too_few_windows"


class SingularSystem(ForecasterError):
    code = "singular_system"


class NotFitted(ForecasterError):
    code = "not_fitted"


class MissingRequiredCovariate(ForecasterError):
    code = "missing_required_covariate"


# --- metrics ----------------------------------------------------------------

class LengthMismatch(ForecasterError):
    code = "length_mismatch"


class EmptyInput(ForecasterError):
    code = "empty_input"


class AlignmentError(ForecasterError):
    code = "alignment_error"


# --- jobs / orchestration ---------------------------------------------------

class ValidationFailed(ForecasterError):
    code = "validation_failed"


class DatasetNotFound(ForecasterError):
    code = "dataset_not_found"


class UnknownJob(ForecasterError):
    code = "unknown_job"


class StaleUpdate(ForecasterError):
    code = "stale_update"


class ModelArtifactMissing(ForecasterError):
    code = "model_artifact_missing"


class CovariateSchemaMismatch(ForecasterError):
    code = "covariate_schema_mismatch"


class StoreError(ForecasterError):
    code = "store_error"

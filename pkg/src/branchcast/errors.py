"""Exception types shared across the branchcast package."""

from __future__ import annotations


class BranchcastError(Exception):
    """Base class for all branchcast errors."""


class CorpusParseError(BranchcastError):
    """A JSONL record could not be parsed into a comment."""

    def __init__(self, line_number: int, reason: str):
        super().__init__(f"line {line_number}: {reason}")
        self.line_number = line_number
        self.reason = reason


class TreeValidationError(BranchcastError):
    """A conversation does not form a valid reply tree."""


class InvalidInstanceError(BranchcastError):
    """The requested node cannot be a branch-prediction instance."""


class DomainError(BranchcastError):
    """An input value is outside the documented domain of an operation."""


class MissingScoreError(BranchcastError):
    """A required reply-to score is unavailable.

    ``missing`` lists the (child_id, parent_id) pairs without a score.
    """

    def __init__(self, missing: list[tuple[str, str]]):
        preview = ", ".join(f"({c!r}, {p!r})" for c, p in missing[:5])
        more = "" if len(missing) <= 5 else f" and {len(missing) - 5} more"
        super().__init__(f"missing reply-to scores for {preview}{more}")
        self.missing = missing


class SchemaMismatchError(BranchcastError):
    """Feature schemas of two matrices or a model and a matrix disagree."""


class ProtocolViolationError(BranchcastError):
    """The external scorer broke the wire protocol."""


class SidecarTransportError(BranchcastError):
    """The external scorer process died or timed out mid-conversation.

    ``partial`` carries any scores received before the failure.
    """

    def __init__(self, message: str, partial: dict[str, float] | None = None):
        super().__init__(message)
        self.partial = partial or {}


class TrainingError(BranchcastError):
    """Model training could not proceed (bad data or divergence)."""


class StageError(BranchcastError):
    """A pipeline stage failed; wraps the underlying cause."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause

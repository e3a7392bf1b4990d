"""Exception hierarchy.

User-facing errors (bad arguments, malformed queries, schema/config
mismatches) derive from :class:`UserError`; storage-level failures derive
from :class:`StorageError`. The CLI maps the former to exit code 1 and the
latter to exit code 2.
"""

from __future__ import annotations


class ProberyError(Exception):
    """Base class for every error raised by this package."""


class UserError(ProberyError):
    """A problem the caller can fix: bad input, bad config, bad query."""


class InvalidArgumentError(UserError):
    """An argument is out of range or otherwise unusable."""


class ConfigError(UserError):
    """Placement parameters are inconsistent (divisibility, ranges, m mismatch)."""


class DegenerateSegmentationError(UserError):
    """Too few distinct sample values to cut the requested segment count."""

    def __init__(self, requested: int, achievable: int):
        self.requested = requested
        self.achievable = achievable
        super().__init__(
            f"cannot build {requested} equal-frequency segments from "
            f"{achievable} distinct value(s); at most {achievable} achievable"
        )


class MissingValueError(UserError):
    """A record lacks a value for an attribute whose dimension has no empty segment."""


class QuerySyntaxError(UserError):
    """Query text does not match the grammar; carries the offending position."""

    def __init__(self, message: str, position: int):
        self.position = position
        super().__init__(f"{message} (at position {position})")


class ConfidenceRangeError(UserError):
    """Confidence must lie in (0, 1]."""


class PlanningError(UserError):
    """Query references an unknown table or attribute, or a mistyped literal."""


class TableExistsError(UserError):
    """Target directory already holds data."""


class StorageError(ProberyError):
    """I/O failure while reading or writing table files."""


class CorruptionError(StorageError):
    """On-disk state disagrees with the manifest."""

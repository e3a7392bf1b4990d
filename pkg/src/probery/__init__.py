"""Embedded key-value query engine with confidence-bounded completeness.

Records are routed into blocks by a designed non-uniform distribution;
queries annotated with a confidence may skip low-probability blocks while
the expected probability of a complete result never drops below the
requested confidence.
"""

from .errors import (
    ConfidenceRangeError,
    ConfigError,
    CorruptionError,
    DegenerateSegmentationError,
    InvalidArgumentError,
    MissingValueError,
    PlanningError,
    ProberyError,
    QuerySyntaxError,
    StorageError,
    TableExistsError,
    UserError,
)
from .probability import (
    PlacementConfig,
    ProbTable,
    block_pp,
    build_prob_table,
    dpa_prob,
    existence_prob,
    h_pdf,
    H_cdf,
    offset_index,
    sample_block,
)
from .query import (
    QueryPlan,
    QuerySpec,
    ResultSet,
    SelectionResult,
    execute,
    h_selection,
    parse_query,
    plan,
    run_query,
)
from .store import BalanceStats, BlockRef, LoadStats, Manifest, Placement, Table
from .tablespace import (
    CellId,
    Predicate,
    SegmentSpec,
    TableSchema,
    build_segments,
    cells_matching,
    locate_cell,
    locate_segment,
)

__version__ = "0.1.0"

__all__ = [
    "BalanceStats",
    "BlockRef",
    "CellId",
    "ConfidenceRangeError",
    "ConfigError",
    "CorruptionError",
    "DegenerateSegmentationError",
    "H_cdf",
    "InvalidArgumentError",
    "LoadStats",
    "Manifest",
    "MissingValueError",
    "PlacementConfig",
    "Placement",
    "PlanningError",
    "ProbTable",
    "ProberyError",
    "QueryPlan",
    "QuerySpec",
    "QuerySyntaxError",
    "ResultSet",
    "SegmentSpec",
    "SelectionResult",
    "StorageError",
    "Table",
    "TableExistsError",
    "TableSchema",
    "UserError",
    "block_pp",
    "build_prob_table",
    "build_segments",
    "cells_matching",
    "dpa_prob",
    "execute",
    "existence_prob",
    "h_pdf",
    "h_selection",
    "locate_cell",
    "locate_segment",
    "offset_index",
    "parse_query",
    "plan",
    "run_query",
    "sample_block",
    "Predicate",
]

"""Logical data model: schemas, equal-frequency segments, and the cell grid.

A table declares its attributes and marks the frequently-queried ones as
dimensions. Each dimension is cut into equal-frequency segments from a
sample of its values; the cross product of the per-dimension segments forms
a grid of cells, and every record maps to exactly one cell. Segment
intervals are half-open and lower-inclusive, with the first and last
intervals unbounded, so the mapping is total over each attribute's domain.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from datetime import date
from functools import cached_property
from itertools import product as cartesian_product
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateSegmentationError,
    InvalidArgumentError,
    MissingValueError,
)

Value = int | float | str | date
Record = tuple  # attribute values in schema order; None marks a missing value

VALUE_KINDS = ("integer", "float", "string", "date")


@dataclass(frozen=True)
class SegmentSpec:
    """Equal-frequency segmentation of one dimension.

    ``boundaries`` holds the k-1 cut values of k value segments; segment j
    covers [boundaries[j-1], boundaries[j]) with the first and last segments
    open below/above. When ``includes_empty`` is set, an extra segment at
    dimension index 0 receives missing values and the value segments shift
    up by one.
    """

    boundaries: tuple[Value, ...]
    includes_empty: bool = False

    def __post_init__(self):
        for lo, hi in zip(self.boundaries, self.boundaries[1:]):
            if not lo < hi:
                raise InvalidArgumentError(
                    f"segment boundaries must be strictly increasing: {lo!r} !< {hi!r}"
                )

    @property
    def segment_count(self) -> int:
        """Number of value segments (k)."""
        return len(self.boundaries) + 1

    @property
    def size(self) -> int:
        """Total dimensional values: k plus the empty segment when enabled."""
        return self.segment_count + (1 if self.includes_empty else 0)

    def value_segment_bounds(self, j: int) -> tuple[Value | None, Value | None]:
        """(low, high) of value segment j, None marking an unbounded side."""
        if not 0 <= j < self.segment_count:
            raise InvalidArgumentError(f"segment index {j} out of range")
        lo = self.boundaries[j - 1] if j >= 1 else None
        hi = self.boundaries[j] if j < len(self.boundaries) else None
        return lo, hi


@dataclass(frozen=True)
class TableSchema:
    """Attribute declarations plus the segmented query attributes.

    ``attributes`` is the full ordered list of (name, kind) pairs with kind
    one of integer/float/string/date; ``query_attributes`` is the ordered
    subset that spans the cell grid, each paired with its SegmentSpec.
    """

    name: str
    attributes: tuple[tuple[str, str], ...]
    query_attributes: tuple[tuple[str, SegmentSpec], ...]

    def __post_init__(self):
        names = [a for a, _ in self.attributes]
        if len(set(names)) != len(names):
            raise InvalidArgumentError("attribute names must be unique")
        for a, kind in self.attributes:
            if kind not in VALUE_KINDS:
                raise InvalidArgumentError(f"unknown value kind {kind!r} for {a!r}")
        if not self.query_attributes:
            raise InvalidArgumentError("at least one query attribute is required")
        for a, _ in self.query_attributes:
            if a not in names:
                raise InvalidArgumentError(f"query attribute {a!r} not declared")

    @cached_property
    def attribute_index(self) -> dict[str, int]:
        return {a: i for i, (a, _) in enumerate(self.attributes)}

    @cached_property
    def attribute_kinds(self) -> dict[str, str]:
        return dict(self.attributes)

    @cached_property
    def query_attribute_names(self) -> tuple[str, ...]:
        return tuple(a for a, _ in self.query_attributes)

    @cached_property
    def dim_sizes(self) -> tuple[int, ...]:
        return tuple(spec.size for _, spec in self.query_attributes)

    @cached_property
    def cell_count(self) -> int:
        """m: the number of cells in the grid."""
        count = 1
        for s in self.dim_sizes:
            count *= s
        return count

    @cached_property
    def _strides(self) -> tuple[int, ...]:
        # row-major: last declared dimension varies fastest
        strides = [1] * len(self.dim_sizes)
        for d in range(len(self.dim_sizes) - 2, -1, -1):
            strides[d] = strides[d + 1] * self.dim_sizes[d + 1]
        return tuple(strides)

    def flatten(self, coords: Sequence[int]) -> int:
        flat = 0
        for c, size, stride in zip(coords, self.dim_sizes, self._strides):
            if not 0 <= c < size:
                raise InvalidArgumentError(f"coordinate {c} out of range for size {size}")
            flat += c * stride
        return flat

    def unflatten(self, flat: int) -> tuple[int, ...]:
        if not 0 <= flat < self.cell_count:
            raise InvalidArgumentError(f"flat cell index {flat} out of range")
        coords = []
        for stride in self._strides:
            coords.append(flat // stride)
            flat %= stride
        return tuple(coords)


@dataclass(frozen=True)
class CellId:
    """A grid cell: per-dimension segment indexes and their row-major flat index."""

    coords: tuple[int, ...]
    flat: int


@dataclass(frozen=True)
class Predicate:
    """One conjunct of a query condition.

    ``op`` is one of ``= < <= > >= range``; scalar ops carry ``value``,
    ``range`` carries the half-open interval [low, high).
    """

    attribute: str
    op: str
    value: Value | None = None
    low: Value | None = None
    high: Value | None = None

    def __post_init__(self):
        if self.op == "range":
            if self.low is None or self.high is None or not self.low < self.high:
                raise InvalidArgumentError("range predicate requires low < high")
        elif self.op in ("=", "<", "<=", ">", ">="):
            if self.value is None:
                raise InvalidArgumentError(f"operator {self.op!r} requires a literal")
        else:
            raise InvalidArgumentError(f"unknown predicate operator {self.op!r}")

    def matches(self, v: Value | None) -> bool:
        """Record-level evaluation; a missing value never satisfies a comparison."""
        if v is None:
            return False
        if self.op == "=":
            return v == self.value
        if self.op == "<":
            return v < self.value
        if self.op == "<=":
            return v <= self.value
        if self.op == ">":
            return v > self.value
        if self.op == ">=":
            return v >= self.value
        return self.low <= v < self.high


def build_segments(
    values: Sequence[Value], k: int, include_empty: bool = False
) -> SegmentSpec:
    """Cut a sample into k approximately equal-frequency segments.

    Boundaries are the sample values at 1-based ranks ceil(j*N/k) for
    j = 1..k-1; coincident boundaries are collapsed, so a heavily skewed
    sample can yield fewer than k segments.
    """
    if k < 1:
        raise InvalidArgumentError(f"segment count must be >= 1, got {k}")
    if not values:
        raise InvalidArgumentError("a non-empty value sample is required")
    distinct = len(set(values))
    if distinct < k:
        raise DegenerateSegmentationError(requested=k, achievable=distinct)
    data = sorted(values)
    n = len(data)
    cuts: list[Value] = []
    for j in range(1, k):
        rank = -(-(j * n) // k)  # ceil(j*n/k) without float rounding
        cut = data[rank - 1]
        if not cuts or cuts[-1] < cut:
            cuts.append(cut)
    return SegmentSpec(boundaries=tuple(cuts), includes_empty=include_empty)


def locate_segment(spec: SegmentSpec, value: Value | None) -> int:
    """Dimension index of ``value``; missing values go to the empty segment."""
    if value is None:
        if spec.includes_empty:
            return 0
        raise MissingValueError("missing value on a dimension without an empty segment")
    j = bisect.bisect_right(spec.boundaries, value)
    return j + 1 if spec.includes_empty else j


def locate_cell(schema: TableSchema, record: Record) -> CellId:
    """Map a record to its cell by locating each query attribute's segment."""
    idx = schema.attribute_index
    coords = tuple(
        locate_segment(spec, record[idx[name]])
        for name, spec in schema.query_attributes
    )
    return CellId(coords=coords, flat=schema.flatten(coords))


def locate_segments_batch(spec: SegmentSpec, values: Sequence[Value]) -> np.ndarray:
    """Vectorized locate_segment over a column of non-missing values."""
    arr = np.asarray(values)
    if arr.dtype.kind in "if":
        out = np.searchsorted(np.asarray(spec.boundaries), arr, side="right")
    else:
        bounds = spec.boundaries
        out = np.fromiter(
            (bisect.bisect_right(bounds, v) for v in values),
            dtype=np.int64,
            count=len(values),
        )
    if spec.includes_empty:
        out = out + 1
    return out


def locate_cells_batch(
    schema: TableSchema, columns: Sequence[Sequence[Value]]
) -> np.ndarray:
    """Flat cell indexes for whole columns of query-attribute values.

    ``columns`` holds one column per query attribute, in declared order.
    Missing values are not supported on this path; use locate_cell for
    records that may carry them.
    """
    flats = np.zeros(len(columns[0]), dtype=np.int64)
    for (name, spec), col, stride in zip(
        schema.query_attributes, columns, schema._strides
    ):
        flats += locate_segments_batch(spec, col) * stride
    return flats


def _segments_overlapping(spec: SegmentSpec, pred: Predicate) -> set[int]:
    """Dimension indexes whose segment interval can contain a matching value."""
    if pred.op == "=":
        return {locate_segment(spec, pred.value)}
    shift = 1 if spec.includes_empty else 0
    matched: set[int] = set()
    for j in range(spec.segment_count):
        lo, hi = spec.value_segment_bounds(j)
        if pred.op == "<":
            ok = lo is None or lo < pred.value
        elif pred.op == "<=":
            ok = lo is None or lo <= pred.value
        elif pred.op in (">", ">="):
            # [lo, hi) meets (v, inf) or [v, inf) exactly when hi > v
            ok = hi is None or hi > pred.value
        else:  # range [low, high)
            ok = (lo is None or lo < pred.high) and (hi is None or hi > pred.low)
        if ok:
            matched.add(j + shift)
    return matched


def cells_matching(
    schema: TableSchema, predicates: Iterable[Predicate]
) -> set[CellId]:
    """Cells that can hold records satisfying the conjunction of predicates.

    Over-approximates at segment granularity: a dimension without a
    predicate matches all its segments, and interval predicates match every
    segment they overlap. Never produces false negatives; record-level
    filtering restores exactness downstream.
    """
    by_attr: dict[str, list[Predicate]] = {}
    qnames = set(schema.query_attribute_names)
    for p in predicates:
        if p.attribute not in qnames:
            raise InvalidArgumentError(
                f"{p.attribute!r} is not a query attribute; filter it post-scan"
            )
        by_attr.setdefault(p.attribute, []).append(p)

    per_dim: list[list[int]] = []
    for name, spec in schema.query_attributes:
        matched = set(range(spec.size))
        for p in by_attr.get(name, ()):
            matched &= _segments_overlapping(spec, p)
        if not matched:
            return set()
        per_dim.append(sorted(matched))

    return {
        CellId(coords=coords, flat=schema.flatten(coords))
        for coords in cartesian_product(*per_dim)
    }

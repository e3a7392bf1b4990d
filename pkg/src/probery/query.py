"""Confidence-annotated queries: parsing, block selection, planning, execution.

The dialect is a single-table conjunctive select with an optional trailing
``with <confidence>`` clause giving a lower bound on the probability that
the result set is complete. Planning matches the predicate to grid cells,
then runs a randomized selection over each cell's blocks that may skip a
block only while the product of the skipped blocks' non-existence
probabilities stays at or above the requested confidence, so the reported
completeness probability can err on the high side only.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import date
from typing import Sequence

import numpy as np

from .errors import (
    ConfidenceRangeError,
    PlanningError,
    QuerySyntaxError,
)
from .probability import existence_prob_array
from .store import BlockRef, Table
from .tablespace import CellId, Predicate, Record, Value, cells_matching

AGGREGATE_FUNCS = ("count", "sum", "avg")
KEYWORDS = frozenset({"select", "from", "where", "and", "with"})

# Selection stops once the remaining budget is this close to 1.
CLOSE_TO_ONE = 1.0 - 1e-9
# Forced closure: confidences below this are raised to it so an extreme
# request cannot skip nearly everything.
MIN_CONFIDENCE = 0.01


@dataclass(frozen=True)
class QuerySpec:
    """A parsed query: projection or aggregate, conjunctive predicates, confidence."""

    table: str
    projection: tuple[str, ...] | None  # None means "*"
    aggregate: tuple[str, str] | None  # (func, attribute)
    predicates: tuple[Predicate, ...]
    confidence: float


@dataclass
class SelectionResult:
    """Outcome of block selection for one cell."""

    cell: int
    requested: float
    selected: frozenset[BlockRef]
    skipped: dict[BlockRef, float]  # block -> its non-existence probability
    expected_pc: float


@dataclass
class QueryPlan:
    spec: QuerySpec
    cells: tuple[CellId, ...]
    selections: tuple[SelectionResult, ...]
    scan_set: frozenset[BlockRef]
    universe: frozenset[BlockRef]
    post_filters: tuple[Predicate, ...]
    per_cell_confidence: float
    combined_expected_pc: float


@dataclass
class ResultSet:
    rows: list[tuple] | None
    aggregate: int | float | None
    expected_pc: float
    blocks_scanned: int
    blocks_skipped: int
    records_scanned: int


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""(?P<WS>\s+)
      | (?P<DATE>\d{4}-\d{2}-\d{2})
      | (?P<NUMBER>-?\d+(?:\.\d+)?)
      | (?P<STRING>'[^']*')
      | (?P<OP><=|>=|=|<|>)
      | (?P<STAR>\*)
      | (?P<COMMA>,)
      | (?P<LPAREN>\()
      | (?P<RPAREN>\))
      | (?P<IDENT>[A-Za-z_][A-Za-z0-9_]*)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    pos: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise QuerySyntaxError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup != "WS":
            tokens.append(_Token(m.lastgroup, m.group(), pos))
        pos = m.end()
    tokens.append(_Token("EOF", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, kind: str, what: str) -> _Token:
        tok = self.peek()
        if tok.kind != kind:
            raise QuerySyntaxError(f"expected {what}, found {tok.text or 'end'!r}", tok.pos)
        return self.advance()

    def at_keyword(self, word: str) -> bool:
        tok = self.peek()
        return tok.kind == "IDENT" and tok.text.lower() == word

    def expect_keyword(self, word: str) -> None:
        tok = self.peek()
        if not self.at_keyword(word):
            raise QuerySyntaxError(f"expected {word!r}, found {tok.text or 'end'!r}", tok.pos)
        self.advance()

    def ident(self, what: str) -> str:
        tok = self.expect("IDENT", what)
        if tok.text.lower() in KEYWORDS:
            raise QuerySyntaxError(f"expected {what}, found keyword {tok.text!r}", tok.pos)
        return tok.text

    def literal(self) -> Value:
        tok = self.advance()
        if tok.kind == "NUMBER":
            return float(tok.text) if "." in tok.text else int(tok.text)
        if tok.kind == "DATE":
            return date.fromisoformat(tok.text)
        if tok.kind == "STRING":
            return tok.text[1:-1]
        raise QuerySyntaxError(f"expected a literal, found {tok.text or 'end'!r}", tok.pos)


def parse_query(text: str) -> QuerySpec:
    """Parse ``select targets from table [where conj] [with confidence]``."""
    p = _Parser(text)
    p.expect_keyword("select")

    projection: tuple[str, ...] | None = None
    aggregate: tuple[str, str] | None = None
    tok = p.peek()
    if tok.kind == "STAR":
        p.advance()
    elif tok.kind == "IDENT" and tok.text.lower() in AGGREGATE_FUNCS \
            and p.tokens[p.i + 1].kind == "LPAREN":
        func = p.advance().text.lower()
        p.advance()  # LPAREN
        attr = p.ident("an attribute name")
        p.expect("RPAREN", "')'")
        aggregate = (func, attr)
    else:
        cols = [p.ident("an attribute name")]
        while p.peek().kind == "COMMA":
            p.advance()
            cols.append(p.ident("an attribute name"))
        projection = tuple(cols)

    p.expect_keyword("from")
    table = p.ident("a table name")

    predicates: list[Predicate] = []
    if p.at_keyword("where"):
        p.advance()
        while True:
            attr = p.ident("an attribute name")
            op = p.expect("OP", "a comparison operator").text
            predicates.append(Predicate(attribute=attr, op=op, value=p.literal()))
            if not p.at_keyword("and"):
                break
            p.advance()

    confidence = 1.0
    if p.at_keyword("with"):
        p.advance()
        tok = p.expect("NUMBER", "a confidence value")
        confidence = float(tok.text)
        if not 0.0 < confidence <= 1.0:
            raise ConfidenceRangeError(
                f"confidence {confidence} outside (0, 1]"
            )

    tail = p.peek()
    if tail.kind != "EOF":
        raise QuerySyntaxError(f"unexpected trailing {tail.text!r}", tail.pos)

    return QuerySpec(
        table=table,
        projection=projection,
        aggregate=aggregate,
        predicates=_merge_range_pairs(predicates),
        confidence=confidence,
    )


def _merge_range_pairs(preds: list[Predicate]) -> tuple[Predicate, ...]:
    """Fold `a >= lo and a < hi` pairs into one half-open range predicate."""
    consumed = [False] * len(preds)
    merged: list[Predicate] = []
    for i, p in enumerate(preds):
        if consumed[i]:
            continue
        if p.op in (">=", "<"):
            want = "<" if p.op == ">=" else ">="
            for j, q in enumerate(preds):
                if consumed[j] or j == i or q.attribute != p.attribute or q.op != want:
                    continue
                lo, hi = (p.value, q.value) if p.op == ">=" else (q.value, p.value)
                if lo < hi:
                    merged.append(Predicate(p.attribute, "range", low=lo, high=hi))
                    consumed[i] = consumed[j] = True
                    break
        if not consumed[i]:
            merged.append(p)
            consumed[i] = True
    return tuple(merged)


# ---------------------------------------------------------------------------
# Heuristic block selection
# ---------------------------------------------------------------------------

def h_selection(
    universe: Sequence[tuple[BlockRef, float]],
    p0: float,
    rng: np.random.Generator,
    cell: int = -1,
) -> SelectionResult:
    """Randomized selection that only ever errs toward more completeness.

    Repeatedly draws an unexamined block uniformly at random. A block whose
    non-existence probability exceeds the remaining budget is skipped and
    the budget divided by it; anything else is kept. Once the budget is
    within 1e-9 of 1 (or everything was examined) the kept blocks plus all
    never-examined blocks are selected.

    The budget is tracked as the product P of skipped non-existence
    probabilities (budget = p0/P) and the skip test compares pne*P > p0 on
    the exact float later stored as P, so expected_pc >= p0 holds without
    rounding leaks.
    """
    if not 0.0 < p0 <= 1.0:
        raise ConfidenceRangeError(f"confidence {p0} outside (0, 1]")
    requested = min(max(p0, MIN_CONFIDENCE), 1.0)
    remaining = list(universe)
    kept: list[BlockRef] = []
    skipped: dict[BlockRef, float] = {}
    prod = 1.0  # product of skipped PNEs; remaining budget is requested/prod
    while remaining and requested < prod * CLOSE_TO_ONE:
        i = int(rng.integers(0, len(remaining)))
        ref, pne = remaining[i]
        remaining[i] = remaining[-1]
        remaining.pop()
        if pne * prod > requested:
            skipped[ref] = pne
            prod = pne * prod
        else:
            kept.append(ref)
    selected = frozenset(kept).union(ref for ref, _ in remaining)
    return SelectionResult(
        cell=cell,
        requested=requested,
        selected=selected,
        skipped=skipped,
        expected_pc=prod,
    )


# ---------------------------------------------------------------------------
# Planning and execution
# ---------------------------------------------------------------------------

_LITERAL_KINDS = {
    "integer": (int, float),
    "float": (int, float),
    "string": (str,),
    "date": (date,),
}


def _check_predicate_types(pred: Predicate, kind: str) -> None:
    allowed = _LITERAL_KINDS[kind]
    values = (pred.low, pred.high) if pred.op == "range" else (pred.value,)
    for v in values:
        if not isinstance(v, allowed) or isinstance(v, bool):
            raise PlanningError(
                f"literal {v!r} does not fit attribute {pred.attribute!r} of kind {kind}"
            )


def plan(spec: QuerySpec, table: Table, rng: np.random.Generator) -> QueryPlan:
    """Resolve names, match cells, and run block selection per cell.

    With k matched cells each cell gets budget p0**(1/k), so the product of
    the per-cell completeness probabilities still dominates p0.
    """
    schema, cfg = table.schema, table.cfg
    if spec.table != schema.name:
        raise PlanningError(f"unknown table {spec.table!r} (this table is {schema.name!r})")
    kinds = schema.attribute_kinds
    for name in spec.projection or ():
        if name not in kinds:
            raise PlanningError(f"unknown attribute {name!r}")
    if spec.aggregate:
        func, attr = spec.aggregate
        if attr not in kinds:
            raise PlanningError(f"unknown attribute {attr!r}")
        if func in ("sum", "avg") and kinds[attr] not in ("integer", "float"):
            raise PlanningError(f"{func} needs a numeric attribute, {attr!r} is {kinds[attr]}")
    for pred in spec.predicates:
        if pred.attribute not in kinds:
            raise PlanningError(f"unknown attribute {pred.attribute!r}")
        _check_predicate_types(pred, kinds[pred.attribute])

    qnames = set(schema.query_attribute_names)
    cell_preds = [p for p in spec.predicates if p.attribute in qnames]
    post_filters = tuple(p for p in spec.predicates if p.attribute not in qnames)

    cells = sorted(cells_matching(schema, cell_preds), key=lambda c: c.flat)
    clamped = min(max(spec.confidence, MIN_CONFIDENCE), 1.0)
    per_cell = clamped ** (1.0 / len(cells)) if cells else clamped

    counts = table.manifest.counts
    pp = table.prob.pp
    block_positions = np.arange(cfg.n)
    selections: list[SelectionResult] = []
    universe_refs: set[BlockRef] = set()
    combined = 1.0
    for cell in cells:
        universe: list[tuple[BlockRef, float]] = []
        for slot in range(cfg.slots):
            omega = counts.get((slot, cell.flat), 0)
            if omega <= 0:
                continue
            offs = (block_positions + cell.flat * cfg.offset_step) % cfg.n
            pne = 1.0 - existence_prob_array(pp[offs], omega)
            universe.extend(
                (BlockRef(slot, j + 1), float(pne[j])) for j in range(cfg.n)
            )
        sel = h_selection(universe, per_cell, rng, cell=cell.flat)
        selections.append(sel)
        universe_refs.update(ref for ref, _ in universe)
        combined *= sel.expected_pc

    scan_set = frozenset().union(*(s.selected for s in selections)) if selections else frozenset()
    return QueryPlan(
        spec=spec,
        cells=tuple(cells),
        selections=tuple(selections),
        scan_set=scan_set,
        universe=frozenset(universe_refs),
        post_filters=post_filters,
        per_cell_confidence=per_cell,
        combined_expected_pc=combined,
    )


def execute(plan_: QueryPlan, table: Table) -> ResultSet:
    """Scan the selected blocks, filter every record, project or aggregate.

    Cell matching over-approximates, so all predicates are re-checked per
    record; returned rows always satisfy the query, incompleteness is the
    only permitted deviation.
    """
    schema = table.schema
    idx = schema.attribute_index
    spec = plan_.spec
    pred_idx = [(p, idx[p.attribute]) for p in spec.predicates]
    proj_idx = None if spec.projection is None else [idx[a] for a in spec.projection]

    wanted = {c.flat for c in plan_.cells}
    scanned = 0
    matching: list[Record] = []
    for rec in table.scan_blocks(plan_.scan_set, wanted):
        scanned += 1
        if all(p.matches(rec[i]) for p, i in pred_idx):
            matching.append(rec)

    rows: list[tuple] | None = None
    aggregate: int | float | None = None
    if spec.aggregate:
        func, attr = spec.aggregate
        ai = idx[attr]
        if func == "count":
            aggregate = len(matching)
        else:
            vals = [rec[ai] for rec in matching if rec[ai] is not None]
            total = sum(vals)
            if func == "sum":
                aggregate = total
            else:
                aggregate = total / len(vals) if vals else None
    elif proj_idx is None:
        rows = matching
    else:
        rows = [tuple(rec[i] for i in proj_idx) for rec in matching]

    return ResultSet(
        rows=rows,
        aggregate=aggregate,
        expected_pc=plan_.combined_expected_pc,
        blocks_scanned=len(plan_.scan_set),
        blocks_skipped=len(plan_.universe) - len(plan_.scan_set),
        records_scanned=scanned,
    )


def run_query(table: Table, text: str, rng: np.random.Generator) -> ResultSet:
    """Parse, plan and execute a query against an open table."""
    return execute(plan(parse_query(text), table, rng), table)


def explain(plan_: QueryPlan) -> str:
    """Human-readable plan summary: cells, selections, expected completeness."""
    lines = [
        f"table: {plan_.spec.table}",
        f"confidence: {plan_.spec.confidence} (per-cell budget {plan_.per_cell_confidence})",
        f"matched cells: {len(plan_.cells)}",
    ]
    for sel in plan_.selections:
        lines.append(
            f"  cell {sel.cell}: selected {len(sel.selected)} blocks, "
            f"skipped {len(sel.skipped)}, expected_pc {sel.expected_pc}"
        )
    lines.append(
        f"scan: {len(plan_.scan_set)} blocks of {len(plan_.universe)} with data"
    )
    lines.append(f"combined expected_pc: {plan_.combined_expected_pc}")
    return "\n".join(lines)

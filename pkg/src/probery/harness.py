"""Monte-Carlo validation and benchmarking.

Measures observed completeness against requested confidences, query
efficiency (matched vs searched blocks), placement-decision throughput,
per-block load balance, and the shape of the existence distribution across
density means. Reports are plain CSV with fixed column sets so runs stay
diffable; figures are rendered separately (see plots).
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .probability import (
    PlacementConfig,
    block_for_cell,
    build_prob_table,
    existence_prob_array,
    sample_blocks,
)
from .query import parse_query, plan, run_query
from .store import BalanceStats, Table
from .tablespace import (
    SegmentSpec,
    TableSchema,
    Value,
    build_segments,
    locate_cells_batch,
)

DEFAULT_VALUE_HIGH = 10**8  # synthetic keys are uniform integers below this


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

def synthetic_records(
    count: int, rng: np.random.Generator, dims: int = 3, high: int = DEFAULT_VALUE_HIGH
) -> np.ndarray:
    """Uniform random integer records, one column per attribute."""
    return rng.integers(0, high, size=(count, dims))


def synthetic_schema(
    dims: int = 3,
    segments: int = 5,
    high: int = DEFAULT_VALUE_HIGH,
    name: str = "bench",
) -> TableSchema:
    """Evenly cut stand-in schema for in-memory benchmarks."""
    attrs = tuple((f"key_{chr(ord('a') + i)}", "integer") for i in range(dims))
    bounds = tuple(high * j // segments for j in range(1, segments))
    return TableSchema(
        name=name,
        attributes=attrs,
        query_attributes=tuple((nm, SegmentSpec(bounds)) for nm, _ in attrs),
    )


def _cube_root_schema(m: int) -> TableSchema:
    side = round(m ** (1.0 / 3.0))
    if side**3 == m:
        return synthetic_schema(dims=3, segments=side)
    return synthetic_schema(dims=1, segments=m)


def build_default_table(
    directory: str | Path,
    records: int = 250_000,
    dims: int = 3,
    segments: int = 5,
    n: int = 500,
    slots: int = 1,
    lambda_: float = 4.0,
    trunk_capacity: int = 1000,
    seed: int = 0,
    name: str = "t",
) -> Table:
    """Generate, segment, create and load the desk-scale synthetic table."""
    rng = np.random.default_rng(seed)
    data = synthetic_records(records, rng, dims=dims)
    attrs = tuple((f"key_{chr(ord('a') + i)}", "integer") for i in range(dims))
    qattrs = tuple(
        (nm, build_segments(data[:, i].tolist(), segments))
        for i, (nm, _) in enumerate(attrs)
    )
    schema = TableSchema(name=name, attributes=attrs, query_attributes=qattrs)
    cfg = PlacementConfig(
        lambda_=lambda_,
        n=n,
        m=schema.cell_count,
        slots=slots,
        trunk_capacity=trunk_capacity,
    )
    table = Table.create(schema, cfg, directory)
    table.load_batch(map(tuple, data.tolist()), rng)
    return table


def _format_literal(v: Value) -> str:
    if isinstance(v, str):
        return f"'{v}'"
    if isinstance(v, float):
        return repr(v)
    return str(v)  # int and date both render directly


def random_segment_query(table: Table, rng: np.random.Generator) -> str:
    """Range condition covering one random segment on every dimension."""
    schema = table.schema
    parts: list[str] = []
    for name, spec in schema.query_attributes:
        j = int(rng.integers(0, spec.segment_count))
        lo, hi = spec.value_segment_bounds(j)
        if lo is not None:
            parts.append(f"{name} >= {_format_literal(lo)}")
        if hi is not None:
            parts.append(f"{name} < {_format_literal(hi)}")
    text = f"select * from {schema.name}"
    if parts:
        text += " where " + " and ".join(parts)
    return text


# ---------------------------------------------------------------------------
# Observed completeness
# ---------------------------------------------------------------------------

@dataclass
class PCRow:
    confidence: float
    trials: int  # trials counted (empty-oracle trials are excluded)
    complete: int
    opc: float
    mean_ec_incomplete: float | None
    mean_expected_pc: float


@dataclass
class PCReport:
    rows: list[PCRow]
    # confidence pairs where observed PC locally decreased: randomization
    # noise worth flagging, never a failure
    non_monotonic: list[tuple[float, float]] = field(default_factory=list)


def validate_pc(
    table: Table,
    confidences: Sequence[float],
    trials: int,
    rng: np.random.Generator,
) -> PCReport:
    """Observed completeness per confidence over random segment queries.

    Each trial runs one random query at the given confidence and the same
    query at confidence 1 as the oracle; the trial counts as complete when
    the row sets match. Trials whose oracle is empty are excluded
    (completeness of an empty set is vacuous).
    """
    rows: list[PCRow] = []
    for confidence in confidences:
        confidence = float(confidence)
        complete = 0
        counted = 0
        ecs: list[float] = []
        epcs: list[float] = []
        for trial_rng in rng.spawn(trials):
            base = random_segment_query(table, trial_rng)
            result = run_query(table, f"{base} with {confidence!r}", trial_rng)
            oracle = run_query(table, base, trial_rng)
            oracle_rows = set(oracle.rows)
            if not oracle_rows:
                continue
            counted += 1
            epcs.append(result.expected_pc)
            got = set(result.rows)
            if got == oracle_rows:
                complete += 1
            else:
                ecs.append(len(got & oracle_rows) / len(oracle_rows))
        rows.append(
            PCRow(
                confidence=confidence,
                trials=counted,
                complete=complete,
                opc=complete / counted if counted else float("nan"),
                mean_ec_incomplete=sum(ecs) / len(ecs) if ecs else None,
                mean_expected_pc=sum(epcs) / len(epcs) if epcs else float("nan"),
            )
        )
    ordered = sorted(rows, key=lambda r: r.confidence)
    non_monotonic = [
        (lo.confidence, hi.confidence)
        for lo, hi in zip(ordered, ordered[1:])
        if not math.isnan(lo.opc) and not math.isnan(hi.opc) and hi.opc < lo.opc
    ]
    return PCReport(rows=rows, non_monotonic=non_monotonic)


# ---------------------------------------------------------------------------
# Query efficiency
# ---------------------------------------------------------------------------

@dataclass
class QERow:
    confidence: float
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float
    trials: int


@dataclass
class QEReport:
    rows: list[QERow]
    samples: dict[float, list[float]]  # per-trial matched/searched ratios


def measure_qe(
    table: Table,
    confidences: Sequence[float],
    trials: int,
    rng: np.random.Generator,
) -> QEReport:
    """Matched-over-searched block ratio per confidence.

    Matched blocks are the ones actually holding records of the queried
    cells (ground truth from a one-off full index); searched blocks are what
    the plan selects. Trials with no matched block are excluded.
    """
    index = table.cell_block_index()
    rows: list[QERow] = []
    samples: dict[float, list[float]] = {}
    for confidence in confidences:
        confidence = float(confidence)
        qes: list[float] = []
        for trial_rng in rng.spawn(trials):
            text = f"{random_segment_query(table, trial_rng)} with {confidence!r}"
            plan_ = plan(parse_query(text), table, trial_rng)
            matched: set = set()
            for cell in plan_.cells:
                matched |= index.get(cell.flat, set())
            searched = len(plan_.scan_set)
            if not matched or searched == 0:
                continue
            qes.append(len(matched) / searched)
        if qes:
            mn, q1, med, q3, mx = np.percentile(qes, [0, 25, 50, 75, 100])
        else:
            mn = q1 = med = q3 = mx = float("nan")
        rows.append(
            QERow(
                confidence=confidence,
                minimum=float(mn),
                q1=float(q1),
                median=float(med),
                q3=float(q3),
                maximum=float(mx),
                trials=len(qes),
            )
        )
        samples[confidence] = qes
    return QEReport(rows=rows, samples=samples)


# ---------------------------------------------------------------------------
# Placement throughput
# ---------------------------------------------------------------------------

@dataclass
class DpaBenchResult:
    n: int
    m: int
    count: int
    build_seconds: float
    placement_seconds: float
    per_second: float


def bench_dpa(
    cfg: PlacementConfig,
    count: int,
    rng: np.random.Generator,
    schema: TableSchema | None = None,
    chunk_size: int = 1 << 20,
) -> DpaBenchResult:
    """Time in-memory placement decisions: cell lookup plus block sampling.

    Uses the same vectorized path as batch loading; record generation and
    any I/O are excluded, mirroring the placement/writing split of load
    statistics.
    """
    if schema is None:
        schema = _cube_root_schema(cfg.m)
    t0 = time.perf_counter()
    prob = build_prob_table(cfg)
    build_seconds = time.perf_counter() - t0

    dims = len(schema.query_attributes)
    elapsed = 0.0
    remaining = count
    while remaining > 0:
        size = min(remaining, chunk_size)
        cols = [rng.integers(0, DEFAULT_VALUE_HIGH, size=size) for _ in range(dims)]
        t0 = time.perf_counter()
        flats = locate_cells_batch(schema, cols)
        rng.integers(0, cfg.slots, size=size)  # slot choice is part of the decision
        u = rng.random(size) * prob.total
        base = sample_blocks(prob, u)
        block_for_cell(base, flats + 1, cfg)
        elapsed += time.perf_counter() - t0
        remaining -= size
    return DpaBenchResult(
        n=cfg.n,
        m=cfg.m,
        count=count,
        build_seconds=build_seconds,
        placement_seconds=elapsed,
        per_second=count / elapsed if elapsed > 0 else 0.0,
    )


# ---------------------------------------------------------------------------
# Existence-shape sweep across density means
# ---------------------------------------------------------------------------

@dataclass
class MuSweepRow:
    mu: float
    frac_g_below_001: float
    frac_g_above_099: float
    gini: float


@dataclass
class MuSweep:
    omega: int
    rows: list[MuSweepRow]
    curves: dict[float, np.ndarray]


def _gini(x: np.ndarray) -> float:
    x = np.sort(x)
    n = len(x)
    total = x.sum()
    if total <= 0:
        return 0.0
    ranks = np.arange(1, n + 1)
    return float(2.0 * (ranks * x).sum() / (n * total) - (n + 1) / n)


def sweep_mu(
    cfg: PlacementConfig, mu_values: Sequence[float], omega: int
) -> MuSweep:
    """Existence-probability shape for each density mean.

    Quantifies the trade-off between a mean near the domain edge (many
    near-zero existence values) and a centered mean (values bunch together).
    """
    rows: list[MuSweepRow] = []
    curves: dict[float, np.ndarray] = {}
    for mu in mu_values:
        pp = build_prob_table(cfg.with_mu(float(mu))).pp
        g = existence_prob_array(pp, omega)
        curves[float(mu)] = g
        rows.append(
            MuSweepRow(
                mu=float(mu),
                frac_g_below_001=float((g < 0.01).mean()),
                frac_g_above_099=float((g > 0.99).mean()),
                gini=_gini(g),
            )
        )
    return MuSweep(omega=omega, rows=rows, curves=curves)


# ---------------------------------------------------------------------------
# CSV reports
# ---------------------------------------------------------------------------

def write_pc_csv(report: PCReport, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["confidence", "trials", "complete", "opc", "mean_ec_incomplete",
             "mean_expected_pc"]
        )
        for r in report.rows:
            w.writerow(
                [r.confidence, r.trials, r.complete, r.opc,
                 "" if r.mean_ec_incomplete is None else r.mean_ec_incomplete,
                 r.mean_expected_pc]
            )


def write_qe_csv(report: QEReport, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["confidence", "min", "q1", "median", "q3", "max", "trials"])
        for r in report.rows:
            w.writerow(
                [r.confidence, r.minimum, r.q1, r.median, r.q3, r.maximum, r.trials]
            )


def write_balance_csv(stats: BalanceStats, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["slot", "block", "count"])
        slots, n = stats.counts.shape
        for s in range(slots):
            for b in range(n):
                w.writerow([s, b + 1, int(stats.counts[s, b])])


def write_dpa_csv(results: Sequence[DpaBenchResult], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "count", "seconds", "per_second"])
        for r in results:
            w.writerow([r.n, r.count, r.placement_seconds, r.per_second])


def write_mu_csv(sweep: MuSweep, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["mu", "frac_g_below_0.01", "frac_g_above_0.99", "gini"])
        for r in sweep.rows:
            w.writerow([r.mu, r.frac_g_below_001, r.frac_g_above_099, r.gini])

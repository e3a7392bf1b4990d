"""File-backed physical layer: slots, blocks, trunks, and the manifest.

A table is a directory. Each slot is a subdirectory holding n block
directories, and each block holds a sequence of capped append-only trunk
files. Records are written line by line; every line starts with the
record's flat cell index so a scan can test cell membership from the header
alone, without parsing the payload. The manifest carries the schema
(segment boundaries verbatim, so cell mapping is bit-stable across runs),
the placement parameters, per-(slot, cell) record counts, and the fill
state of every block's current trunk. It is rewritten atomically
(write-temp-then-rename) after each load batch; a crash mid-batch can
orphan trunk lines, which `verify` detects but does not repair.

Layout:
    <table_dir>/manifest.json
    <table_dir>/slot_<s>/block_<j>/trunk_<t>.dat

Trunk line format (bit-exact):
    <cell_flat_index>\t<field_1>\t...\t<field_K>\n
with string fields escaping backslash, tab and newline as \\, \t, \n.
An empty field denotes a missing value (an empty string is stored as
missing; the experiments never exercise empty strings).
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    ConfigError,
    CorruptionError,
    StorageError,
    TableExistsError,
)
from .probability import (
    PlacementConfig,
    ProbTable,
    block_for_cell,
    build_prob_table,
    sample_block,
    sample_blocks,
)
from .tablespace import (
    CellId,
    Record,
    SegmentSpec,
    TableSchema,
    Value,
    locate_cell,
    locate_cells_batch,
)

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"


# ---------------------------------------------------------------------------
# Value and line (de)serialization
# ---------------------------------------------------------------------------

def _escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def _unescape(s: str) -> str:
    if "\\" not in s:
        return s
    out = []
    i = 0
    while i < len(s):
        c = s[i]
        if c == "\\" and i + 1 < len(s):
            nxt = s[i + 1]
            out.append({"t": "\t", "n": "\n", "\\": "\\"}.get(nxt, nxt))
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


def format_value(kind: str, v: Value | None) -> str:
    if v is None:
        return ""
    if kind == "integer":
        return str(v)
    if kind == "float":
        return repr(float(v))
    if kind == "date":
        return v.isoformat()
    return _escape(v)


def parse_value(kind: str, s: str) -> Value | None:
    if s == "":
        return None
    if kind == "integer":
        return int(s)
    if kind == "float":
        return float(s)
    if kind == "date":
        return date.fromisoformat(s)
    return _unescape(s)


def format_line(flat: int, record: Record, schema: TableSchema) -> str:
    parts = [str(flat)]
    for (_, kind), v in zip(schema.attributes, record):
        parts.append(format_value(kind, v))
    return "\t".join(parts) + "\n"


def parse_line(line: str, schema: TableSchema) -> tuple[int, Record]:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != len(schema.attributes) + 1:
        raise CorruptionError(
            f"line has {len(parts) - 1} fields, schema declares {len(schema.attributes)}"
        )
    flat = int(parts[0])
    record = tuple(
        parse_value(kind, raw) for (_, kind), raw in zip(schema.attributes, parts[1:])
    )
    return flat, record


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

def _encode_boundary(kind: str, v: Value):
    return v.isoformat() if kind == "date" else v


def _decode_boundary(kind: str, v):
    return date.fromisoformat(v) if kind == "date" else v


@dataclass
class Manifest:
    schema: TableSchema
    cfg: PlacementConfig
    counts: dict[tuple[int, int], int] = field(default_factory=dict)
    trunk_state: dict[tuple[int, int], list[int]] = field(default_factory=dict)
    created: str = ""
    modified: str = ""
    format_version: int = FORMAT_VERSION

    def to_json(self) -> str:
        kinds = self.schema.attribute_kinds
        doc = {
            "format_version": self.format_version,
            "created": self.created,
            "modified": self.modified,
            "schema": {
                "name": self.schema.name,
                "attributes": [list(a) for a in self.schema.attributes],
                "query_attributes": [
                    {
                        "name": name,
                        "boundaries": [
                            _encode_boundary(kinds[name], b) for b in spec.boundaries
                        ],
                        "includes_empty": spec.includes_empty,
                    }
                    for name, spec in self.schema.query_attributes
                ],
            },
            "cfg": {
                "lambda": self.cfg.lambda_,
                "sigma": self.cfg.sigma,
                "mu": self.cfg.mu,
                "n": self.cfg.n,
                "m": self.cfg.m,
                "slots": self.cfg.slots,
                "trunk_capacity": self.cfg.trunk_capacity,
            },
            "counts": {f"{s},{c}": v for (s, c), v in sorted(self.counts.items())},
            "trunk_state": {
                f"{s},{b}": list(st) for (s, b), st in sorted(self.trunk_state.items())
            },
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Manifest":
        doc = json.loads(text)
        sdoc = doc["schema"]
        attributes = tuple((a, k) for a, k in sdoc["attributes"])
        kinds = dict(attributes)
        query_attributes = tuple(
            (
                q["name"],
                SegmentSpec(
                    boundaries=tuple(
                        _decode_boundary(kinds[q["name"]], b) for b in q["boundaries"]
                    ),
                    includes_empty=q["includes_empty"],
                ),
            )
            for q in sdoc["query_attributes"]
        )
        schema = TableSchema(
            name=sdoc["name"], attributes=attributes, query_attributes=query_attributes
        )
        cdoc = doc["cfg"]
        cfg = PlacementConfig(
            lambda_=cdoc["lambda"],
            sigma=cdoc["sigma"],
            mu=cdoc["mu"],
            n=cdoc["n"],
            m=cdoc["m"],
            slots=cdoc["slots"],
            trunk_capacity=cdoc["trunk_capacity"],
        )

        def split_key(k: str) -> tuple[int, int]:
            a, b = k.split(",")
            return int(a), int(b)

        return cls(
            schema=schema,
            cfg=cfg,
            counts={split_key(k): v for k, v in doc["counts"].items()},
            trunk_state={split_key(k): list(v) for k, v in doc["trunk_state"].items()},
            created=doc["created"],
            modified=doc["modified"],
            format_version=doc["format_version"],
        )


# ---------------------------------------------------------------------------
# Placement and scan units
# ---------------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class BlockRef:
    """One block of one slot: the unit over which selection and skipping act."""

    slot: int
    block: int  # 1-based


@dataclass(frozen=True)
class Placement:
    """Where a record was routed: slot, block, and the block's open trunk."""

    slot: int
    block: int
    trunk: int
    cell: CellId


@dataclass
class LoadStats:
    records: int = 0
    placement_seconds: float = 0.0
    write_seconds: float = 0.0


@dataclass
class BalanceStats:
    """Per-block record counts with mean/std summaries, from the manifest."""

    counts: np.ndarray  # shape (slots, n)
    total: int
    mean: float
    std: float
    per_slot_mean: list[float]
    per_slot_std: list[float]

    @property
    def cv(self) -> float:
        return float(self.std / self.mean) if self.mean > 0 else 0.0


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class Table:
    """Handle to one on-disk table: placement decisions, appends, scans.

    Single writer during a load; any number of concurrent readers otherwise.
    Parsed block contents are cached in memory for re-scans and invalidated
    on append, so reads always reflect what reached disk.
    """

    def __init__(self, directory: Path, manifest: Manifest):
        self.directory = Path(directory)
        self.manifest = manifest
        self.prob: ProbTable = build_prob_table(manifest.cfg)
        self._cache: dict[tuple[int, int], dict[int, list[Record]]] = {}
        self._block_pad = len(str(manifest.cfg.n))
        self._slot_pad = max(1, len(str(manifest.cfg.slots - 1)))

    # -- lifecycle ---------------------------------------------------------

    @classmethod
    def create(
        cls, schema: TableSchema, cfg: PlacementConfig, directory: str | Path
    ) -> "Table":
        directory = Path(directory)
        if directory.exists() and any(directory.iterdir()):
            raise TableExistsError(f"directory {directory} is not empty")
        if cfg.m != schema.cell_count:
            raise ConfigError(
                f"cfg.m={cfg.m} disagrees with the schema's cell count "
                f"{schema.cell_count}"
            )
        directory.mkdir(parents=True, exist_ok=True)
        now = _now()
        manifest = Manifest(schema=schema, cfg=cfg, created=now, modified=now)
        table = cls(directory, manifest)
        table.save_manifest()
        return table

    @classmethod
    def open(cls, directory: str | Path) -> "Table":
        directory = Path(directory)
        path = directory / MANIFEST_NAME
        if not path.is_file():
            raise StorageError(f"no manifest at {path}")
        return cls(directory, Manifest.from_json(path.read_text(encoding="utf-8")))

    def save_manifest(self) -> None:
        self.manifest.modified = _now()
        path = self.directory / MANIFEST_NAME
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(self.manifest.to_json(), encoding="utf-8")
        os.replace(tmp, path)

    # -- paths ---------------------------------------------------------------

    def _block_dir(self, slot: int, block: int) -> Path:
        return (
            self.directory
            / f"slot_{str(slot).zfill(self._slot_pad)}"
            / f"block_{str(block).zfill(self._block_pad)}"
        )

    def _trunk_path(self, slot: int, block: int, trunk: int) -> Path:
        return self._block_dir(slot, block) / f"trunk_{str(trunk).zfill(4)}.dat"

    # -- placement -----------------------------------------------------------

    @property
    def schema(self) -> TableSchema:
        return self.manifest.schema

    @property
    def cfg(self) -> PlacementConfig:
        return self.manifest.cfg

    @property
    def record_count(self) -> int:
        return sum(self.manifest.counts.values())

    def place_record(self, record: Record, rng: np.random.Generator) -> Placement:
        """Route one record: uniform slot, block drawn from its cell's row.

        Pure decision apart from the count bump; nothing touches disk until
        append_record.
        """
        cell = locate_cell(self.schema, record)
        cfg = self.cfg
        slot = int(rng.integers(0, cfg.slots))
        u = min(rng.random() * self.prob.total, np.nextafter(self.prob.total, 0.0))
        base = sample_block(self.prob, u)
        block = int(block_for_cell(base, cell.flat + 1, cfg))
        key = (slot, cell.flat)
        self.manifest.counts[key] = self.manifest.counts.get(key, 0) + 1
        state = self.manifest.trunk_state.get((slot, block), [0, 0])
        trunk = state[0] + 1 if state[1] >= cfg.trunk_capacity else state[0]
        return Placement(slot=slot, block=block, trunk=trunk, cell=cell)

    def append_record(self, placement: Placement, record: Record) -> tuple[int, int]:
        """Write one record line; returns (trunk, line index within trunk)."""
        line = format_line(placement.cell.flat, record, self.schema)
        trunk, line_no = self._append_lines(placement.slot, placement.block, [line])
        return trunk, line_no

    def _append_lines(
        self, slot: int, block: int, lines: Sequence[str]
    ) -> tuple[int, int]:
        """Append lines to a block, rotating trunks at capacity.

        Returns (trunk, line index) of the first appended line.
        """
        cfg = self.cfg
        state = self.manifest.trunk_state.setdefault((slot, block), [0, 0])
        first: tuple[int, int] | None = None
        pos = 0
        bdir = self._block_dir(slot, block)
        try:
            bdir.mkdir(parents=True, exist_ok=True)
            while pos < len(lines):
                if state[1] >= cfg.trunk_capacity:
                    state[0] += 1
                    state[1] = 0
                room = cfg.trunk_capacity - state[1]
                batch = lines[pos : pos + room]
                path = self._trunk_path(slot, block, state[0])
                with path.open("a", encoding="utf-8", newline="") as fh:
                    fh.writelines(batch)
                if first is None:
                    first = (state[0], state[1])
                state[1] += len(batch)
                pos += len(batch)
        except OSError as exc:
            raise StorageError(f"write failed under {bdir}: {exc}") from exc
        self._cache.pop((slot, block), None)
        return first if first is not None else (state[0], state[1])

    def load_batch(
        self,
        records: Iterable[Record],
        rng: np.random.Generator,
        chunk_size: int = 65536,
    ) -> LoadStats:
        """Place then append a stream of records; persist the manifest once.

        Placement time (cell lookup + block sampling) and write time
        (serialization + disk appends) are tracked separately.
        """
        stats = LoadStats()
        schema, cfg = self.schema, self.cfg
        records = iter(records)
        while True:
            chunk: list[Record] = []
            for rec in records:
                chunk.append(rec)
                if len(chunk) >= chunk_size:
                    break
            if not chunk:
                break

            t0 = time.perf_counter()
            flats, slots, blocks = self._place_chunk(chunk, rng)
            stats.placement_seconds += time.perf_counter() - t0

            t0 = time.perf_counter()
            grouped: dict[tuple[int, int], list[str]] = {}
            for rec, flat, slot, block in zip(chunk, flats, slots, blocks):
                grouped.setdefault((int(slot), int(block)), []).append(
                    format_line(int(flat), rec, schema)
                )
            for (slot, block), lines in sorted(grouped.items()):
                self._append_lines(slot, block, lines)
            stats.write_seconds += time.perf_counter() - t0

            keys = slots.astype(np.int64) * cfg.m + flats
            uniq, cnt = np.unique(keys, return_counts=True)
            for k, c in zip(uniq, cnt):
                key = (int(k) // cfg.m, int(k) % cfg.m)
                self.manifest.counts[key] = self.manifest.counts.get(key, 0) + int(c)
            stats.records += len(chunk)

        if stats.records:
            self.save_manifest()
        return stats

    def _place_chunk(
        self, chunk: list[Record], rng: np.random.Generator
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        schema, cfg = self.schema, self.cfg
        qidx = [schema.attribute_index[nm] for nm, _ in schema.query_attributes]
        try:
            cols = [[rec[i] for rec in chunk] for i in qidx]
            flats = locate_cells_batch(schema, cols)
        except TypeError:
            # missing values in a query column: fall back to per-record location
            flats = np.fromiter(
                (locate_cell(schema, rec).flat for rec in chunk),
                dtype=np.int64,
                count=len(chunk),
            )
        slots = rng.integers(0, cfg.slots, size=len(chunk))
        u = rng.random(len(chunk)) * self.prob.total
        base = sample_blocks(self.prob, u)
        blocks = block_for_cell(base, flats + 1, cfg)
        return flats, slots, blocks

    # -- scans ---------------------------------------------------------------

    def _load_block(self, slot: int, block: int) -> dict[int, list[Record]]:
        key = (slot, block)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        state = self.manifest.trunk_state.get(key)
        by_cell: dict[int, list[Record]] = {}
        if state is not None:
            schema = self.schema
            for trunk in range(state[0] + 1):
                path = self._trunk_path(slot, block, trunk)
                if not path.is_file():
                    raise CorruptionError(f"missing trunk file {path}")
                with path.open("r", encoding="utf-8", newline="") as fh:
                    for line in fh:
                        flat, record = parse_line(line, schema)
                        by_cell.setdefault(flat, []).append(record)
        self._cache[key] = by_cell
        return by_cell

    def scan_blocks(
        self,
        blocks: Iterable[BlockRef] | None = None,
        cells: Iterable[int] | None = None,
    ) -> Iterator[Record]:
        """Stream records from the given blocks whose header cell is wanted.

        ``blocks=None`` means every block holding data; ``cells=None`` means
        every cell. Result order is deterministic but otherwise unspecified.
        """
        if blocks is None:
            refs = sorted(self.manifest.trunk_state.keys())
        else:
            refs = sorted((b.slot, b.block) for b in blocks)
        wanted = None if cells is None else sorted(set(cells))
        for slot, block in refs:
            by_cell = self._load_block(slot, block)
            if wanted is None:
                for flat in sorted(by_cell):
                    yield from by_cell[flat]
            else:
                for flat in wanted:
                    hit = by_cell.get(flat)
                    if hit:
                        yield from hit

    def cell_block_index(self) -> dict[int, set[BlockRef]]:
        """Which blocks actually hold at least one record of each cell."""
        index: dict[int, set[BlockRef]] = {}
        for slot, block in sorted(self.manifest.trunk_state.keys()):
            for flat, recs in self._load_block(slot, block).items():
                if recs:
                    index.setdefault(flat, set()).add(BlockRef(slot, block))
        return index

    # -- statistics and verification -----------------------------------------

    def balance_stats(self) -> BalanceStats:
        cfg = self.cfg
        counts = np.zeros((cfg.slots, cfg.n), dtype=np.int64)
        for (slot, block), (trunk, fill) in self.manifest.trunk_state.items():
            counts[slot, block - 1] = trunk * cfg.trunk_capacity + fill
        total = int(counts.sum())
        return BalanceStats(
            counts=counts,
            total=total,
            mean=total / (cfg.n * cfg.slots),
            std=float(counts.std()),
            per_slot_mean=[float(row.mean()) for row in counts],
            per_slot_std=[float(row.std()) for row in counts],
        )

    def verify(self, deep: bool = False) -> list[str]:
        """Cross-check disk against the manifest; returns found problems."""
        problems: list[str] = []
        cfg, schema = self.cfg, self.schema
        expected_files: set[Path] = set()
        total_lines = 0
        for (slot, block), (trunk, fill) in sorted(self.manifest.trunk_state.items()):
            for t in range(trunk + 1):
                path = self._trunk_path(slot, block, t)
                expected_files.add(path)
                want = cfg.trunk_capacity if t < trunk else fill
                if not path.is_file():
                    problems.append(f"missing trunk file {path}")
                    continue
                lines = path.read_text(encoding="utf-8").splitlines()
                total_lines += len(lines)
                if len(lines) != want:
                    problems.append(
                        f"{path}: {len(lines)} lines, manifest expects {want}"
                    )
                if len(lines) > cfg.trunk_capacity:
                    problems.append(f"{path}: exceeds trunk capacity")
                for line in lines:
                    try:
                        flat, record = parse_line(line + "\n", schema)
                    except (CorruptionError, ValueError) as exc:
                        problems.append(f"{path}: unparsable line: {exc}")
                        continue
                    if not 0 <= flat < cfg.m:
                        problems.append(f"{path}: cell header {flat} out of range")
                    elif deep and locate_cell(schema, record).flat != flat:
                        problems.append(
                            f"{path}: header {flat} disagrees with the record's cell"
                        )
        for path in self.directory.glob("slot_*/block_*/trunk_*.dat"):
            if path not in expected_files:
                problems.append(f"orphan trunk file {path}")
        counted = sum(self.manifest.counts.values())
        if counted != total_lines:
            problems.append(
                f"manifest counts {counted} records, trunks hold {total_lines} lines"
            )
        return problems

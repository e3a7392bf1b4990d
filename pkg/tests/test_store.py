from __future__ import annotations

from datetime import date

import numpy as np
import pytest

from _support import chi_square_pvalue
from probery.errors import ConfigError, CorruptionError, TableExistsError
from probery.probability import PlacementConfig, offset_index
from probery.store import (
    BlockRef,
    Placement,
    Table,
    format_line,
    format_value,
    parse_line,
    parse_value,
)
from probery.tablespace import SegmentSpec, TableSchema, locate_cell


def grid_schema(name="t", segments=5, dims=3, step=20) -> TableSchema:
    bounds = tuple(range(step, step * segments, step))
    attrs = tuple((f"k{i}", "integer") for i in range(dims))
    return TableSchema(
        name=name,
        attributes=attrs,
        query_attributes=tuple((nm, SegmentSpec(bounds)) for nm, _ in attrs),
    )


def make_table(tmp_path, n=500, slots=1, capacity=1000, **schema_kw) -> Table:
    schema = grid_schema(**schema_kw)
    cfg = PlacementConfig(
        lambda_=4, n=n, m=schema.cell_count, slots=slots, trunk_capacity=capacity
    )
    return Table.create(schema, cfg, tmp_path / "t")


def random_records(count, seed=0, high=100):
    rng = np.random.default_rng(seed)
    return [tuple(int(v) for v in row) for row in rng.integers(0, high, size=(count, 3))]


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def test_value_round_trip_all_kinds():
    cases = [
        ("integer", 42),
        ("integer", -7),
        ("float", 3.5),
        ("float", 0.1),
        ("float", -1e300),
        ("string", "plain"),
        ("string", "tab\there"),
        ("string", "line\nbreak"),
        ("string", "back\\slash"),
        ("string", "mix\\t\tof\nall"),
        ("date", date(2021, 7, 9)),
        ("integer", None),
        ("string", None),
    ]
    for kind, v in cases:
        assert parse_value(kind, format_value(kind, v)) == v


def test_line_round_trip_and_header():
    schema = TableSchema(
        name="t",
        attributes=(("a", "integer"), ("s", "string"), ("d", "date"), ("x", "float")),
        query_attributes=(("a", SegmentSpec((10,))),),
    )
    rec = (12, "wei\trd\nvalue\\", date(2020, 2, 29), 2.25)
    line = format_line(3, rec, schema)
    assert line.endswith("\n") and line.count("\n") == 1
    flat, back = parse_line(line, schema)
    assert flat == 3
    assert back == rec


def test_float_serialization_is_exact():
    for v in (0.1, 1 / 3, 1e-300, 123456.789):
        assert parse_value("float", format_value("float", v)) == v


# ---------------------------------------------------------------------------
# Table lifecycle
# ---------------------------------------------------------------------------

def test_create_and_reopen(tmp_path):
    table = make_table(tmp_path)
    assert (tmp_path / "t" / "manifest.json").is_file()
    again = Table.open(tmp_path / "t")
    assert again.schema == table.schema
    assert again.cfg == table.cfg


def test_manifest_round_trips_date_boundaries(tmp_path):
    schema = TableSchema(
        name="events",
        attributes=(("day", "date"), ("x", "integer")),
        query_attributes=(
            ("day", SegmentSpec((date(2020, 1, 1), date(2021, 6, 15)))),
        ),
    )
    cfg = PlacementConfig(lambda_=3, n=27, m=3)
    Table.create(schema, cfg, tmp_path / "t")
    reopened = Table.open(tmp_path / "t")
    assert reopened.schema.query_attributes[0][1].boundaries == (
        date(2020, 1, 1),
        date(2021, 6, 15),
    )
    recs = [(date(2019, 5, 5), 1), (date(2020, 8, 8), 2), (date(2022, 1, 1), 3)]
    reopened.load_batch(recs, np.random.default_rng(0))
    assert sorted(Table.open(tmp_path / "t").scan_blocks()) == sorted(recs)


def test_create_rejects_cell_count_mismatch(tmp_path):
    schema = grid_schema()
    cfg = PlacementConfig(lambda_=4, n=500, m=100)
    with pytest.raises(ConfigError):
        Table.create(schema, cfg, tmp_path / "t")


def test_create_rejects_nonempty_directory(tmp_path):
    target = tmp_path / "t"
    target.mkdir()
    (target / "junk").write_text("x")
    with pytest.raises(TableExistsError):
        make_table(tmp_path)


def test_block_count_must_divide_lambda():
    with pytest.raises(ConfigError):
        PlacementConfig(lambda_=4, n=10, m=1)


# ---------------------------------------------------------------------------
# Placement
# ---------------------------------------------------------------------------

def test_single_slot_always_zero(tmp_path):
    table = make_table(tmp_path)
    rng = np.random.default_rng(0)
    for rec in random_records(50):
        assert table.place_record(rec, rng).slot == 0


def test_placement_deterministic_under_seed(tmp_path):
    t1 = make_table(tmp_path, slots=3)
    seq1 = [t1.place_record(r, np.random.default_rng(11)) for r in random_records(1)]
    t2 = Table.open(tmp_path / "t")
    seq2 = [t2.place_record(r, np.random.default_rng(11)) for r in random_records(1)]
    assert seq1 == seq2
    rng_a, rng_b = np.random.default_rng(5), np.random.default_rng(5)
    recs = random_records(300, seed=2)
    a = [(p.slot, p.block) for p in (t1.place_record(r, rng_a) for r in recs)]
    b = [(p.slot, p.block) for p in (t2.place_record(r, rng_b) for r in recs)]
    assert a == b


def test_placement_counts_accumulate(tmp_path):
    table = make_table(tmp_path)
    rng = np.random.default_rng(1)
    for rec in random_records(200):
        table.place_record(rec, rng)
    assert sum(table.manifest.counts.values()) == 200


def test_placement_frequencies_follow_cell_row(tmp_path):
    # single-cell table: empirical block frequencies vs the shifted mass vector
    schema = TableSchema(
        name="one",
        attributes=(("a", "integer"),),
        query_attributes=(("a", SegmentSpec((), includes_empty=False)),),
    )
    cfg = PlacementConfig(lambda_=4, n=400, m=1)
    table = Table.create(schema, cfg, tmp_path / "one")
    rng = np.random.default_rng(77)
    n_draws = 100_000
    hits = np.zeros(cfg.n)
    for _ in range(n_draws):
        p = table.place_record((5,), rng)
        hits[p.block - 1] += 1
    expected = np.array(
        [table.prob.pp[offset_index(1, j, cfg) - 1] for j in range(1, cfg.n + 1)]
    )
    expected = expected / expected.sum() * n_draws
    assert chi_square_pvalue(hits, expected) > 0.001


# ---------------------------------------------------------------------------
# Appends and trunk rotation
# ---------------------------------------------------------------------------

def test_first_append_lands_at_origin(tmp_path):
    table = make_table(tmp_path)
    cell = locate_cell(table.schema, (1, 2, 3))
    placement = Placement(slot=0, block=1, trunk=0, cell=cell)
    assert table.append_record(placement, (1, 2, 3)) == (0, 0)


def test_trunk_rotation_at_capacity(tmp_path):
    table = make_table(tmp_path, capacity=1000)
    cell = locate_cell(table.schema, (1, 2, 3))
    placement = Placement(slot=0, block=7, trunk=0, cell=cell)
    for _ in range(1001):
        table.append_record(placement, (1, 2, 3))
    block_dir = table._block_dir(0, 7)
    trunks = sorted(p.name for p in block_dir.glob("trunk_*.dat"))
    assert trunks == ["trunk_0000.dat", "trunk_0001.dat"]
    t0 = (block_dir / "trunk_0000.dat").read_text().splitlines()
    t1 = (block_dir / "trunk_0001.dat").read_text().splitlines()
    assert len(t0) == 1000
    assert len(t1) == 1


def test_append_then_scan_round_trip(tmp_path):
    table = make_table(tmp_path)
    rec = (15, 35, 55)
    placement = table.place_record(rec, np.random.default_rng(3))
    table.append_record(placement, rec)
    got = list(table.scan_blocks())
    assert got == [rec]


# ---------------------------------------------------------------------------
# Batch loading
# ---------------------------------------------------------------------------

def test_load_nothing_is_a_noop(tmp_path):
    table = make_table(tmp_path)
    before = table.manifest.to_json()
    stats = table.load_batch([], np.random.default_rng(0))
    assert stats.records == 0
    assert stats.placement_seconds == 0.0
    assert stats.write_seconds == 0.0
    assert table.manifest.to_json() == before


def test_load_then_reopen_preserves_everything(tmp_path):
    table = make_table(tmp_path)
    recs = random_records(10_000, seed=4)
    stats = table.load_batch(recs, np.random.default_rng(8))
    assert stats.records == 10_000
    assert sum(table.manifest.counts.values()) == 10_000

    reopened = Table.open(tmp_path / "t")
    assert reopened.manifest.counts == table.manifest.counts
    assert reopened.manifest.trunk_state == table.manifest.trunk_state
    assert sorted(reopened.scan_blocks()) == sorted(recs)


def test_load_with_missing_values_falls_back(tmp_path):
    schema = TableSchema(
        name="t",
        attributes=(("a", "integer"), ("b", "integer")),
        query_attributes=(
            ("a", SegmentSpec((10,), includes_empty=True)),
            ("b", SegmentSpec((10,))),
        ),
    )
    cfg = PlacementConfig(lambda_=4, n=24, m=6)
    table = Table.create(schema, cfg, tmp_path / "t")
    recs = [(1, 2), (None, 3), (15, 4), (None, 20)]
    table.load_batch(recs, np.random.default_rng(0))
    assert sorted(table.scan_blocks(), key=repr) == sorted(recs, key=repr)


def test_scan_cell_filter_equals_post_filter(tmp_path):
    table = make_table(tmp_path)
    recs = random_records(5_000, seed=6)
    table.load_batch(recs, np.random.default_rng(1))
    target = locate_cell(table.schema, (50, 50, 50)).flat
    filtered = sorted(table.scan_blocks(cells={target}))
    full = sorted(
        r for r in table.scan_blocks() if locate_cell(table.schema, r).flat == target
    )
    assert filtered == full
    assert filtered  # the cell is populated at this volume


def test_scan_no_blocks_is_empty(tmp_path):
    table = make_table(tmp_path)
    table.load_batch(random_records(100), np.random.default_rng(0))
    assert list(table.scan_blocks(blocks=set())) == []


def test_scan_missing_trunk_is_corruption(tmp_path):
    table = make_table(tmp_path)
    table.load_batch(random_records(500, seed=3), np.random.default_rng(2))
    (slot, block) = next(iter(table.manifest.trunk_state))
    table._trunk_path(slot, block, 0).unlink()
    fresh = Table.open(tmp_path / "t")
    with pytest.raises(CorruptionError):
        list(fresh.scan_blocks(blocks={BlockRef(slot, block)}))


# ---------------------------------------------------------------------------
# Balance, conservation, verification
# ---------------------------------------------------------------------------

def test_balance_of_empty_table(tmp_path):
    stats = make_table(tmp_path).balance_stats()
    assert stats.total == 0
    assert stats.mean == 0.0
    assert stats.std == 0.0
    assert stats.cv == 0.0


def test_balance_conservation(tmp_path):
    table = make_table(tmp_path)
    table.load_batch(random_records(20_000, seed=5), np.random.default_rng(3))
    stats = table.balance_stats()
    assert stats.total == 20_000
    assert stats.counts.sum() == 20_000
    assert stats.mean == 20_000 / (table.cfg.n * table.cfg.slots)


def test_trunk_cap_never_exceeded(tmp_path):
    table = make_table(tmp_path, capacity=50)
    table.load_batch(random_records(5_000, seed=8), np.random.default_rng(4))
    for path in (tmp_path / "t").glob("slot_*/block_*/trunk_*.dat"):
        assert len(path.read_text().splitlines()) <= 50


def test_header_fidelity_and_verify_clean(tmp_path):
    table = make_table(tmp_path)
    table.load_batch(random_records(3_000, seed=9), np.random.default_rng(5))
    assert table.verify(deep=True) == []


def test_verify_detects_missing_trunk(tmp_path):
    table = make_table(tmp_path)
    table.load_batch(random_records(1_000, seed=1), np.random.default_rng(1))
    victim = next(iter(table.manifest.trunk_state))
    table._trunk_path(victim[0], victim[1], 0).unlink()
    problems = Table.open(tmp_path / "t").verify()
    assert any("missing trunk" in p for p in problems)


def test_verify_detects_orphan_lines(tmp_path):
    table = make_table(tmp_path)
    table.load_batch(random_records(1_000, seed=2), np.random.default_rng(1))
    (slot, block) = next(iter(table.manifest.trunk_state))
    with table._trunk_path(slot, block, 0).open("a") as fh:
        fh.write("0\t1\t2\t3\n")
    problems = Table.open(tmp_path / "t").verify()
    assert problems  # line-count mismatch and conservation failure


def test_verify_detects_orphan_trunk_file(tmp_path):
    table = make_table(tmp_path)
    table.load_batch(random_records(1_000, seed=3), np.random.default_rng(1))
    stray = table._trunk_path(0, table.cfg.n, 7)
    stray.parent.mkdir(parents=True, exist_ok=True)
    stray.write_text("0\t1\t2\t3\n")
    problems = Table.open(tmp_path / "t").verify()
    assert any("orphan" in p for p in problems)


def test_cell_block_index_matches_scan(tmp_path):
    table = make_table(tmp_path)
    table.load_batch(random_records(2_000, seed=10), np.random.default_rng(6))
    index = table.cell_block_index()
    total = sum(table.manifest.counts.values())
    assert total == 2_000
    for flat, refs in index.items():
        for ref in refs:
            recs = list(table.scan_blocks(blocks={ref}, cells={flat}))
            assert recs

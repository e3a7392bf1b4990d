from __future__ import annotations

import csv
import json

import pytest

from probery.cli import main


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen -> create -> load, shared by the command tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data.tsv"
    table = root / "table"
    config = root / "config.json"
    config.write_text(
        json.dumps(
            {
                "name": "t",
                "attributes": [
                    ["key_a", "integer"],
                    ["key_b", "integer"],
                    ["key_c", "integer"],
                ],
                "query_attributes": [
                    {"name": "key_a", "segments": 5},
                    {"name": "key_b", "segments": 5},
                    {"name": "key_c", "segments": 5},
                ],
                "placement": {"lambda": 4, "n": 500, "slots": 1,
                              "trunk_capacity": 1000},
            }
        )
    )
    assert main(["gen", "--out", str(data), "--count", "4000", "--seed", "5"]) == 0
    assert main(
        ["create", "--table", str(table), "--config", str(config),
         "--sample", str(data)]
    ) == 0
    assert main(["load", "--table", str(table), "--input", str(data),
                 "--seed", "1"]) == 0
    return root, table


def test_gen_writes_header_and_rows(pipeline):
    root, _ = pipeline
    lines = (root / "data.tsv").read_text().splitlines()
    assert lines[0] == "key_a\tkey_b\tkey_c"
    assert len(lines) == 4001
    first = lines[1].split("\t")
    assert all(0 <= int(v) < 10**8 for v in first)


def test_query_deterministic_under_seed(pipeline, capsys):
    _, table = pipeline
    argv = [
        "query", "--table", str(table),
        "select key_a from t where key_b >= 10000000 with 0.8",
        "--seed", "7",
    ]
    assert main(argv) == 0
    first = capsys.readouterr()
    assert main(argv) == 0
    second = capsys.readouterr()
    assert first.out == second.out
    assert first.err == second.err
    assert "expected_pc=" in first.err


def test_query_rows_on_stdout_metadata_on_stderr(pipeline, capsys):
    _, table = pipeline
    assert main(["query", "--table", str(table), "select * from t", "--seed", "1"]) == 0
    captured = capsys.readouterr()
    assert len(captured.out.splitlines()) == 4000
    assert captured.err.startswith("expected_pc=1.0")


def test_query_aggregate_output(pipeline, capsys):
    _, table = pipeline
    assert main(["query", "--table", str(table), "select count(key_a) from t",
                 "--seed", "1"]) == 0
    captured = capsys.readouterr()
    assert captured.out.strip() == "4000"


def test_query_confidence_out_of_range_is_user_error(pipeline, capsys):
    _, table = pipeline
    code = main(["query", "--table", str(table), "select key_a from t with 2"])
    captured = capsys.readouterr()
    assert code == 1
    assert "error" in captured.err


def test_query_explain_does_not_execute(pipeline, capsys):
    _, table = pipeline
    assert main(
        ["query", "--table", str(table),
         "select * from t where key_a < 10000000 with 0.5",
         "--seed", "3", "--explain"]
    ) == 0
    captured = capsys.readouterr()
    assert "matched cells" in captured.out
    assert "combined expected_pc" in captured.out


def test_validate_pc_csv_row_count(pipeline, capsys):
    root, table = pipeline
    out = root / "pc.csv"
    assert main(
        ["validate-pc", "--table", str(table), "--confidences", "0.1,0.5,0.9",
         "--trials", "5", "--out", str(out), "--seed", "3", "--no-plot"]
    ) == 0
    capsys.readouterr()
    with open(out, newline="") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 4  # header + one row per confidence


def test_measure_qe_writes_csv(pipeline, capsys):
    root, table = pipeline
    out = root / "qe.csv"
    assert main(
        ["measure-qe", "--table", str(table), "--confidences", "0.5,1.0",
         "--trials", "5", "--out", str(out), "--seed", "4", "--no-plot"]
    ) == 0
    capsys.readouterr()
    with open(out, newline="") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 3


def test_stats_renders_figure_next_to_csv(pipeline, capsys):
    root, table = pipeline
    out = root / "balance.csv"
    assert main(["stats", "--table", str(table), "--out", str(out)]) == 0
    captured = capsys.readouterr()
    assert "records: 4000" in captured.out
    assert out.is_file()
    assert (root / "balance.png").is_file()


def test_bench_dpa_csv(pipeline, capsys):
    root, _ = pipeline
    out = root / "dpa.csv"
    assert main(
        ["bench-dpa", "--n", "400", "--m", "100", "--count", "20000",
         "--seed", "2", "--out", str(out), "--no-plot"]
    ) == 0
    captured = capsys.readouterr()
    assert "rate=" in captured.out
    with open(out, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[1][0] == "400"


def test_verify_ok_then_detects_corruption(pipeline, capsys, tmp_path):
    _, table = pipeline
    assert main(["verify", "--table", str(table), "--deep"]) == 0
    assert capsys.readouterr().out.strip() == "ok"

    # corrupt a copy, not the shared fixture
    import shutil

    broken = tmp_path / "broken"
    shutil.copytree(table, broken)
    victim = next(broken.glob("slot_*/block_*/trunk_*.dat"))
    with victim.open("a") as fh:
        fh.write("0\t1\t2\t3\n")
    code = main(["verify", "--table", str(broken)])
    captured = capsys.readouterr()
    assert code == 2
    assert "problem" in captured.err


def test_unknown_command_exits_one(capsys):
    assert main(["frobnicate"]) == 1
    assert "error" in capsys.readouterr().err


def test_missing_required_option_exits_one(capsys):
    assert main(["load", "--table", "somewhere"]) == 1
    capsys.readouterr()


def test_missing_table_is_storage_error(tmp_path, capsys):
    code = main(["query", "--table", str(tmp_path / "nope"), "select * from t"])
    captured = capsys.readouterr()
    assert code == 2
    assert "storage error" in captured.err


def test_create_requires_sample_for_derived_segments(tmp_path, capsys):
    config = tmp_path / "cfg.json"
    config.write_text(
        json.dumps(
            {
                "name": "t",
                "attributes": [["a", "integer"]],
                "query_attributes": [{"name": "a", "segments": 4}],
                "placement": {"lambda": 4, "n": 16},
            }
        )
    )
    code = main(["create", "--table", str(tmp_path / "t"), "--config", str(config)])
    captured = capsys.readouterr()
    assert code == 1
    assert "--sample" in captured.err


def test_create_with_explicit_boundaries(tmp_path, capsys):
    config = tmp_path / "cfg.json"
    config.write_text(
        json.dumps(
            {
                "name": "t",
                "attributes": [["a", "integer"]],
                "query_attributes": [{"name": "a", "boundaries": [10, 20, 30]}],
                "placement": {"lambda": 4, "n": 16},
            }
        )
    )
    assert main(["create", "--table", str(tmp_path / "t"), "--config",
                 str(config)]) == 0
    capsys.readouterr()
    from probery.store import Table

    table = Table.open(tmp_path / "t")
    assert table.schema.query_attributes[0][1].boundaries == (10, 20, 30)
    assert table.cfg.m == 4

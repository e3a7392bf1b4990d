"""Command-line front end.

Subcommands: create, gen, load, query, validate-pc, measure-qe, bench-dpa,
stats, verify. Query rows go to stdout (tab-separated) with a trailing
metadata line on stderr so stdout stays pipeable. Report commands write CSV
files and render a PNG figure alongside unless --no-plot is given.

Exit codes: 0 success, 1 user error, 2 storage/internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from datetime import date
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import InvalidArgumentError, StorageError, UserError
from .harness import (
    bench_dpa,
    measure_qe,
    synthetic_records,
    validate_pc,
    write_balance_csv,
    write_dpa_csv,
    write_pc_csv,
    write_qe_csv,
)
from .probability import PlacementConfig
from .query import execute, explain, parse_query, plan
from .store import Table, format_value
from .tablespace import Record, SegmentSpec, TableSchema, build_segments


def _rng(seed: int | None) -> np.random.Generator:
    return np.random.default_rng(seed)


def _parse_field(kind: str, s: str):
    if s == "":
        return None
    if kind == "integer":
        return int(s)
    if kind == "float":
        return float(s)
    if kind == "date":
        return date.fromisoformat(s)
    return s


def _read_records(
    path: str, schema: TableSchema, delimiter: str
) -> Iterator[Record]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader, None)
        if header is None:
            raise InvalidArgumentError(f"{path} is empty")
        try:
            col_of = [header.index(name) for name, _ in schema.attributes]
        except ValueError:
            missing = [n for n, _ in schema.attributes if n not in header]
            raise InvalidArgumentError(
                f"input header is missing attribute(s): {', '.join(missing)}"
            ) from None
        for lineno, row in enumerate(reader, start=2):
            try:
                yield tuple(
                    _parse_field(kind, row[ci])
                    for (_, kind), ci in zip(schema.attributes, col_of)
                )
            except (ValueError, IndexError) as exc:
                raise InvalidArgumentError(f"{path}:{lineno}: bad row: {exc}") from exc


def _read_sample_columns(
    path: str, wanted: dict[str, str], delimiter: str
) -> dict[str, list]:
    columns: dict[str, list] = {name: [] for name in wanted}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader, None)
        if header is None:
            raise InvalidArgumentError(f"{path} is empty")
        col_of = {}
        for name in wanted:
            if name not in header:
                raise InvalidArgumentError(f"sample file lacks column {name!r}")
            col_of[name] = header.index(name)
        for row in reader:
            for name, ci in col_of.items():
                v = _parse_field(wanted[name], row[ci])
                if v is not None:
                    columns[name].append(v)
    return columns


def _confidence_list(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise InvalidArgumentError(f"bad confidence list {text!r}") from None


def _figure_path(out: str) -> Path:
    return Path(out).with_suffix(".png")


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------

def _cmd_gen(args) -> int:
    rng = _rng(args.seed)
    names = [f"key_{chr(ord('a') + i)}" for i in range(args.attributes)]
    data = synthetic_records(args.count, rng, dims=args.attributes, high=args.max_value)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=args.delimiter)
        w.writerow(names)
        w.writerows(data.tolist())
    print(f"wrote {args.count} records to {args.out}")
    return 0


def _cmd_create(args) -> int:
    with open(args.config, encoding="utf-8") as fh:
        doc = json.load(fh)
    attributes = tuple((a, k) for a, k in doc["attributes"])
    kinds = dict(attributes)

    needs_sample = {
        q["name"]: kinds.get(q["name"], "integer")
        for q in doc["query_attributes"]
        if "boundaries" not in q
    }
    columns: dict[str, list] = {}
    if needs_sample:
        if not args.sample:
            raise InvalidArgumentError(
                "config requests derived segments; provide --sample DATAFILE"
            )
        columns = _read_sample_columns(args.sample, needs_sample, args.delimiter)

    query_attributes = []
    for q in doc["query_attributes"]:
        name = q["name"]
        if "boundaries" in q:
            raw = q["boundaries"]
            if kinds.get(name) == "date":
                bounds = tuple(date.fromisoformat(b) for b in raw)
            else:
                bounds = tuple(raw)
            spec = SegmentSpec(
                boundaries=bounds, includes_empty=q.get("includes_empty", False)
            )
        else:
            spec = build_segments(
                columns[name], q["segments"], q.get("includes_empty", False)
            )
        query_attributes.append((name, spec))

    schema = TableSchema(
        name=doc["name"],
        attributes=attributes,
        query_attributes=tuple(query_attributes),
    )
    pdoc = doc.get("placement", {})
    kwargs = dict(
        lambda_=pdoc.get("lambda", 4.0),
        n=pdoc.get("n", 500),
        m=schema.cell_count,
        sigma=pdoc.get("sigma", 0.3989),
        slots=pdoc.get("slots", 1),
        trunk_capacity=pdoc.get("trunk_capacity", 1000),
    )
    if pdoc.get("mu") is not None:
        kwargs["mu"] = pdoc["mu"]
    cfg = PlacementConfig(**kwargs)
    Table.create(schema, cfg, args.table)
    print(
        f"created table {schema.name!r} at {args.table}: "
        f"{schema.cell_count} cells, {cfg.n} blocks x {cfg.slots} slot(s)"
    )
    return 0


def _cmd_load(args) -> int:
    table = Table.open(args.table)
    stats = table.load_batch(
        _read_records(args.input, table.schema, args.delimiter), _rng(args.seed)
    )
    print(
        f"loaded {stats.records} records "
        f"(placement {stats.placement_seconds:.3f}s, write {stats.write_seconds:.3f}s)"
    )
    return 0


def _cmd_query(args) -> int:
    table = Table.open(args.table)
    plan_ = plan(parse_query(args.query), table, _rng(args.seed))
    if args.explain:
        print(explain(plan_))
        return 0
    result = execute(plan_, table)
    kinds = table.schema.attribute_kinds
    if result.rows is not None:
        spec = plan_.spec
        names = spec.projection or [a for a, _ in table.schema.attributes]
        row_kinds = [kinds[a] for a in names]
        out = sys.stdout
        for row in result.rows:
            out.write("\t".join(format_value(k, v) for k, v in zip(row_kinds, row)))
            out.write("\n")
    else:
        v = result.aggregate
        print("" if v is None else (repr(v) if isinstance(v, float) else v))
    print(
        f"expected_pc={result.expected_pc!r} "
        f"blocks_scanned={result.blocks_scanned} "
        f"blocks_skipped={result.blocks_skipped} "
        f"records_scanned={result.records_scanned}",
        file=sys.stderr,
    )
    return 0


def _cmd_validate_pc(args) -> int:
    table = Table.open(args.table)
    report = validate_pc(
        table, _confidence_list(args.confidences), args.trials, _rng(args.seed)
    )
    write_pc_csv(report, args.out)
    if not args.no_plot:
        from .plots import plot_pc_report

        plot_pc_report(report, _figure_path(args.out))
    for r in report.rows:
        print(
            f"confidence={r.confidence:g} trials={r.trials} opc={r.opc:.4f} "
            f"mean_expected_pc={r.mean_expected_pc:.4f}"
        )
    for lo, hi in report.non_monotonic:
        print(f"note: opc dips from confidence {lo:g} to {hi:g} (selection noise)")
    print(f"wrote {args.out}")
    return 0


def _cmd_measure_qe(args) -> int:
    table = Table.open(args.table)
    report = measure_qe(
        table, _confidence_list(args.confidences), args.trials, _rng(args.seed)
    )
    write_qe_csv(report, args.out)
    if not args.no_plot:
        from .plots import plot_qe_report

        plot_qe_report(report, _figure_path(args.out))
    for r in report.rows:
        print(
            f"confidence={r.confidence:g} trials={r.trials} "
            f"median_qe={r.median:.4f}"
        )
    print(f"wrote {args.out}")
    return 0


def _cmd_bench_dpa(args) -> int:
    rng = _rng(args.seed)
    results = []
    for n in (int(part) for part in args.n.split(",") if part.strip()):
        cfg = PlacementConfig(lambda_=args.lambda_, n=n, m=args.m)
        res = bench_dpa(cfg, args.count, rng)
        results.append(res)
        print(
            f"n={res.n} count={res.count} build={res.build_seconds:.4f}s "
            f"placement={res.placement_seconds:.4f}s rate={res.per_second:,.0f}/s"
        )
    if args.out:
        write_dpa_csv(results, args.out)
        if not args.no_plot:
            from .plots import plot_dpa_bench

            plot_dpa_bench(results, _figure_path(args.out))
        print(f"wrote {args.out}")
    return 0


def _cmd_stats(args) -> int:
    table = Table.open(args.table)
    stats = table.balance_stats()
    print(f"records: {stats.total}")
    print(f"blocks: {table.cfg.n} x {table.cfg.slots} slot(s)")
    print(f"mean per block: {stats.mean:.2f}  std: {stats.std:.2f}  cv: {stats.cv:.4f}")
    for s, (m, sd) in enumerate(zip(stats.per_slot_mean, stats.per_slot_std)):
        print(f"slot {s}: mean {m:.2f} std {sd:.2f}")
    if args.out:
        write_balance_csv(stats, args.out)
        if not args.no_plot:
            from .plots import plot_balance

            plot_balance(stats, _figure_path(args.out))
        print(f"wrote {args.out}")
    return 0


def _cmd_verify(args) -> int:
    table = Table.open(args.table)
    problems = table.verify(deep=args.deep)
    if problems:
        for p in problems:
            print(p, file=sys.stderr)
        print(f"{len(problems)} problem(s) found", file=sys.stderr)
        return 2
    print("ok")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

class _ArgumentParser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog="probery",
        description="Embedded query engine trading quantified completeness for scan scope",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)

    def add_seed(p):
        p.add_argument("--seed", type=int, default=None, help="rng seed (default: entropy)")

    def add_plot(p):
        p.add_argument("--no-plot", action="store_true", help="skip figure rendering")

    p = sub.add_parser("gen", help="generate a synthetic delimited dataset")
    p.add_argument("--out", required=True, help="output data file")
    p.add_argument("--count", type=int, default=250_000)
    p.add_argument("--attributes", type=int, default=3)
    p.add_argument("--max-value", type=int, default=10**8, dest="max_value")
    p.add_argument("--delimiter", default="\t")
    add_seed(p)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("create", help="create an empty table from a config file")
    p.add_argument("--table", required=True, help="table directory")
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--sample", help="data file for deriving equal-frequency segments")
    p.add_argument("--delimiter", default="\t")
    p.set_defaults(func=_cmd_create)

    p = sub.add_parser("load", help="load a delimited data file")
    p.add_argument("--table", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--delimiter", default="\t")
    add_seed(p)
    p.set_defaults(func=_cmd_load)

    p = sub.add_parser("query", help="run a confidence-annotated query")
    p.add_argument("--table", required=True)
    p.add_argument("query", help="query text, e.g. \"select * from t where a >= 10 with 0.8\"")
    p.add_argument("--explain", action="store_true", help="print the plan, do not execute")
    add_seed(p)
    p.set_defaults(func=_cmd_query)

    p = sub.add_parser("validate-pc", help="observed completeness vs confidence")
    p.add_argument("--table", required=True)
    p.add_argument("--confidences", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")
    p.add_argument("--trials", type=int, default=400)
    p.add_argument("--out", required=True, help="CSV output path")
    add_seed(p)
    add_plot(p)
    p.set_defaults(func=_cmd_validate_pc)

    p = sub.add_parser("measure-qe", help="query efficiency vs confidence")
    p.add_argument("--table", required=True)
    p.add_argument("--confidences", default="0.2,0.5,0.8,1.0")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--out", required=True, help="CSV output path")
    add_seed(p)
    add_plot(p)
    p.set_defaults(func=_cmd_measure_qe)

    p = sub.add_parser("bench-dpa", help="time in-memory placement decisions")
    p.add_argument("--n", default="500", help="comma list of block counts")
    p.add_argument("--m", type=int, default=125, help="cell count")
    p.add_argument("--lambda", type=float, default=4.0, dest="lambda_")
    p.add_argument("--count", type=int, default=1_000_000)
    p.add_argument("--out", help="CSV output path")
    add_seed(p)
    add_plot(p)
    p.set_defaults(func=_cmd_bench_dpa)

    p = sub.add_parser("stats", help="table statistics and block balance")
    p.add_argument("--table", required=True)
    p.add_argument("--out", help="CSV output path for per-block counts")
    add_plot(p)
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("verify", help="cross-check trunk files against the manifest")
    p.add_argument("--table", required=True)
    p.add_argument("--deep", action="store_true", help="also re-derive each line's cell")
    p.set_defaults(func=_cmd_verify)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except StorageError as exc:
        print(f"storage error: {exc}", file=sys.stderr)
        return 2
    except BrokenPipeError:
        # downstream consumer (e.g. head) closed the pipe; leave quietly
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

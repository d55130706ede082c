from __future__ import annotations

import json
import os

import pytest

from rowtrace.executor import ExecutionContext, execute
from rowtrace.pipeline import Pipeline, parse_pipeline
from rowtrace.tables import Schema, Table
from rowtrace.values import Kind

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


def fixture_path(name: str) -> str:
    return os.path.join(FIXTURES, name)


def tbl(columns: list[tuple[str, str]], rows: list[tuple]) -> Table:
    schema = Schema(tuple((n, Kind.parse(k)) for n, k in columns))
    return Table(schema, [tuple(r) for r in rows])


def make_pipeline(tables: dict[str, Table], ops: list[dict], output: str | None = None) -> Pipeline:
    doc = {
        "tables": [
            {"name": name, "path": "", "schema": [[c, k.value] for c, k in t.schema.columns]}
            for name, t in tables.items()
        ],
        "operators": ops,
        "output": output or ops[-1]["id"],
    }
    return parse_pipeline(json.dumps(doc))


def run_ops(tables: dict[str, Table], ops: list[dict], output: str | None = None) -> Table:
    p = make_pipeline(tables, ops, output)
    ctx = ExecutionContext(tables=dict(tables))
    return execute(p, ctx)


@pytest.fixture
def t_small() -> Table:
    return tbl([("a", "Int"), ("b", "Str")], [(1, "x"), (2, "y"), (3, "x"), (None, "z")])

"""Schemas, rows, and in-memory tables.

Rows are plain tuples in schema column order. Tables keep insertion
order and may contain duplicate rows; lineage-level reasoning treats
them as sets of row values, with positions kept for reporting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ValidationError
from .values import Kind


@dataclass(frozen=True)
class Schema:
    columns: tuple[tuple[str, Kind], ...]

    def __post_init__(self):
        names = [c for c, _ in self.columns]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate column names in schema: {names}")

    @classmethod
    def of(cls, *cols: tuple[str, Kind]) -> "Schema":
        return cls(tuple(cols))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c for c, _ in self.columns)

    def kind(self, name: str) -> Kind:
        for c, k in self.columns:
            if c == name:
                return k
        raise ValidationError(f"no column {name!r} in schema {self.names}")

    def has(self, name: str) -> bool:
        return any(c == name for c, _ in self.columns)

    def index(self, name: str) -> int:
        for i, (c, _) in enumerate(self.columns):
            if c == name:
                return i
        raise ValidationError(f"no column {name!r} in schema {self.names}")

    def env(self) -> dict[str, Kind]:
        return dict(self.columns)

    def project(self, names: list[str]) -> "Schema":
        return Schema(tuple((c, self.kind(c)) for c in names))


@dataclass
class Table:
    schema: Schema
    rows: list[tuple] = field(default_factory=list)

    def row_dict(self, pos: int) -> dict:
        return dict(zip(self.schema.names, self.rows[pos]))

    def value_set(self) -> set[tuple]:
        return set(self.rows)

    def project(self, names: list[str]) -> "Table":
        idx = [self.schema.index(n) for n in names]
        return Table(self.schema.project(names), [tuple(r[i] for i in idx) for r in self.rows])

    def __len__(self) -> int:
        return len(self.rows)


def row_env(schema: Schema, row: tuple) -> dict:
    return dict(zip(schema.names, row))

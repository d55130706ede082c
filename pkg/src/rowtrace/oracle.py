"""Brute-force ground truth for row lineage.

The lineage of an output row is the union of all minimal input subsets
that still produce it. This module finds that union by enumerating
every subset of the input rows, so it is exponential and capped, but it
is independent of the inference engine and serves as the reference the
engine is tested against.
"""

from __future__ import annotations

from .errors import OutputRowNotFoundError, SizeLimitError
from .executor import ExecutionContext, eval_operator, execute
from .pipeline import Operator, Pipeline
from .tables import Table

ROW_LIMIT = 18


def _check_limit(total: int) -> None:
    if total > ROW_LIMIT:
        raise SizeLimitError(f"oracle enumeration over {total} rows exceeds the {ROW_LIMIT}-row cap")


def _minimal_union(tables: list[Table], produces: list[bool]) -> list[frozenset[tuple]]:
    """Union of all minimal producing subsets, as row-value sets per table.

    ``produces[mask]`` says whether the subset encoded by ``mask`` (bits
    ordered table by table, row by row) yields the target row. Minimal
    means inclusion-minimal: no producing proper subset exists. Scanning
    in increasing population count makes that a check against the
    minimal masks already found.
    """
    total = sum(len(t) for t in tables)
    minimal_masks: list[int] = []
    union_mask = 0
    for mask in sorted(range(1 << total), key=lambda m: m.bit_count()):
        if not produces[mask]:
            continue
        if any(m & mask == m for m in minimal_masks):
            continue
        minimal_masks.append(mask)
        union_mask |= mask
    out = []
    offset = 0
    for t in tables:
        rows = {t.rows[i] for i in range(len(t)) if union_mask >> (offset + i) & 1}
        out.append(frozenset(rows))
        offset += len(t)
    return out


def _subsets(tables: list[Table], mask: int) -> list[Table]:
    out = []
    offset = 0
    for t in tables:
        rows = [t.rows[i] for i in range(len(t)) if mask >> (offset + i) & 1]
        out.append(Table(t.schema, rows))
        offset += len(t)
    return out


def oracle_operator_lineage(
    op: Operator,
    ins: list[Table],
    t_o: tuple,
    sub_source: Table | None = None,
) -> tuple[list[frozenset[tuple]], frozenset[tuple] | None]:
    """Ground-truth lineage of ``t_o`` through a single operator.

    Returns one row-value set per entry of ``ins``, plus one for the
    sub-pipeline source table when the operator has one.
    """
    tables = list(ins) + ([sub_source] if sub_source is not None else [])
    total = sum(len(t) for t in tables)
    _check_limit(total)

    sub = op.sub()

    def run(mask: int) -> bool:
        parts = _subsets(tables, mask)
        ctx = ExecutionContext(tables={})
        if sub_source is not None and sub is not None:
            ctx.tables[sub.source] = parts[-1]
        out = eval_operator(op, parts[: len(ins)], ctx)
        return any(r == t_o for r in out.rows)

    produces = [run(m) for m in range(1 << total)]
    if not produces[(1 << total) - 1]:
        raise OutputRowNotFoundError(f"row {t_o!r} is not produced by {op.id}")
    union = _minimal_union(tables, produces)
    if sub_source is not None:
        return union[: len(ins)], union[-1]
    return union, None


def oracle_pipeline_lineage(p: Pipeline, ctx: ExecutionContext, t_o: tuple) -> dict[str, frozenset[tuple]]:
    """Ground-truth lineage of output row ``t_o`` through a whole pipeline,
    as a row-value set per source table."""
    names = list(p.tables)
    tables = [ctx.tables[n] for n in names]
    total = sum(len(t) for t in tables)
    _check_limit(total)

    def run(mask: int) -> bool:
        parts = _subsets(tables, mask)
        out = execute(p, ExecutionContext(tables=dict(zip(names, parts))))
        return any(r == t_o for r in out.rows)

    produces = [run(m) for m in range(1 << total)]
    if not produces[(1 << total) - 1]:
        raise OutputRowNotFoundError(f"row {t_o!r} is not in the pipeline output")
    union = _minimal_union(tables, produces)
    return dict(zip(names, union))


def positions_of(table: Table, values: frozenset[tuple]) -> list[int]:
    """Source positions whose row value belongs to a lineage value set.
    Duplicate-valued rows are indistinguishable, so all of them appear."""
    return [i for i, r in enumerate(table.rows) if r in values]

"""Answering lineage queries against a plan.

A query starts from one output row, binds its values to the plan's row
parameters, and walks the captures from the output toward the sources.
At each capture the stored selection picks the rows that mattered for
the bindings so far, and every picked row spawns a new binding through
the capture's pins. The per-source predicates then run once per binding
over the source tables; a source row belongs to the lineage when any
binding selects it.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

from .errors import (
    ConcretizationLimitError,
    MissingIntermediateError,
    OutputRowNotFoundError,
)
from .executor import ExecutionContext
from .exprs import eval_expr
from .planner import LineagePlan
from .tables import row_env
from .values import render_cell

# bindings multiply across captures; past this the answer would not be
# something a person can act on anyway
CONCRETIZATION_LIMIT = 10_000

PRECISE = "precise"
SUPERSET = "superset"


@dataclass
class LineageResult:
    """Per-source lineage rows with their 0-based positions. ``mode`` is
    precise only when every step of the plan stayed exact. The false
    positive slot stays empty here; comparison harnesses fill it."""

    mode: str
    rows: dict[str, list[tuple[int, tuple]]]
    flags: tuple[str, ...] = ()
    false_positives: dict[str, list[int]] | None = None
    elapsed_ms: float = 0.0

    def positions(self, table: str) -> list[int]:
        return [pos for pos, _ in self.rows.get(table, [])]


def _bindings_through_captures(plan: LineagePlan, t_o, ctx: ExecutionContext):
    out_id = plan.decisions[0].op_id
    out = ctx.outputs.get(out_id, ctx.captured.get(out_id))
    if out is None:
        raise MissingIntermediateError(f"no table for output step {out_id!r}")
    row = tuple(t_o)
    if row not in set(out.rows):
        raise OutputRowNotFoundError(f"{row!r} is not an output row")

    bindings = [{f"row.{c}": v for c, v in zip(out.schema.names, row)}]
    for m in plan.materializations:
        cap = ctx.captured.get(m.op_id)
        if cap is None:
            raise MissingIntermediateError(f"capture {m.op_id!r} was not recorded")
        if tuple(cap.schema.names) != m.columns:
            cap = cap.project(list(m.columns))
        cols = cap.schema.names
        fresh = []
        for b in bindings:
            for r in cap.rows:
                if eval_expr(m.selection, row_env(cap.schema, r), b) is not True:
                    continue
                d = dict(b)
                for name, col in m.pins:
                    d[name] = r[cols.index(col)]
                fresh.append(d)
        # identical capture rows spawn identical bindings; keep one
        seen, deduped = set(), []
        for d in fresh:
            key = tuple(sorted(d.items(), key=lambda kv: kv[0]))
            if key not in seen:
                seen.add(key)
                deduped.append(d)
        if len(deduped) > CONCRETIZATION_LIMIT:
            raise ConcretizationLimitError(
                f"{len(deduped)} binding combinations at {m.op_id}"
            )
        bindings = deduped
    return bindings


def query(plan: LineagePlan, t_o, ctx: ExecutionContext) -> LineageResult:
    """Lineage of one output row, given the captures the plan asked for.

    ``ctx`` holds the source tables, the captured intermediates, and the
    output table (under the last operator's id in ``ctx.outputs`` or
    ``ctx.captured``); the output row is given by value."""
    t0 = time.perf_counter()
    bindings = _bindings_through_captures(plan, t_o, ctx)
    rows: dict[str, list[tuple[int, tuple]]] = {}
    for name, table in ctx.tables.items():
        src = plan.sources.get(name)
        hits: list[tuple[int, tuple]] = []
        if src is not None and bindings:
            for pos, r in enumerate(table.rows):
                env = row_env(table.schema, r)
                if any(eval_expr(src.pred, env, b) is True for b in bindings):
                    hits.append((pos, r))
        rows[name] = hits
    mode = PRECISE if plan.precise else SUPERSET
    return LineageResult(mode, rows, elapsed_ms=(time.perf_counter() - t0) * 1e3)


def query_iterative(pipeline, phases, t_o, ctx: ExecutionContext) -> LineageResult:
    """Lineage without captures: run the refinement loop over the
    pushed-down, pushed-up predicates until the source sets stop moving."""
    from .iterative import refine

    res, _ = refine(pipeline, phases, t_o, ctx)
    return res


# ---------------------------------------------------------------------------
# result rendering
# ---------------------------------------------------------------------------


def render(res: LineageResult) -> str:
    lines = [f"mode={res.mode}"]
    for flag in res.flags:
        lines.append(f"flag={flag}")
    for name in sorted(res.rows):
        for pos, row in res.rows[name]:
            cells = ",".join(render_cell(v) for v in row)
            lines.append(f"table={name} pos={pos} {cells}")
    return "\n".join(lines)


def render_doc(res: LineageResult) -> dict:
    doc = {
        "mode": res.mode,
        "flags": list(res.flags),
        "tables": {
            name: [{"pos": pos, "row": [render_cell(v) for v in row]} for pos, row in hits]
            for name, hits in res.rows.items()
        },
        "elapsed_ms": round(res.elapsed_ms, 3),
    }
    if res.false_positives is not None:
        doc["false_positives"] = res.false_positives
    return doc

"""Reference executor: CSV loading, operator evaluation, predicate application.

Bag semantics with deterministic row order: nested-loop joins keep
left-major order, grouping keeps first-occurrence order, sorts are
stable. Captures for materialization points are passive copies and
never change computed results.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

from .errors import CsvError, ExecError, UnboundParameterError, ValidationError
from .exprs import Expr, eval_expr, params_of, setvars_of
from .pipeline import GROUP_SOURCE, Agg, Operator, Pipeline, SubPipe
from .tables import Schema, Table, row_env
from .values import parse_cell, render_cell


def load_csv(path: str, schema: Schema) -> Table:
    """Load a headered CSV file against a declared schema. Empty cells
    are Null; the header must name the schema columns in order."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvError(f"{path}: empty file") from None
        if tuple(header) != schema.names:
            raise CsvError(f"{path}: header {header} does not match schema {list(schema.names)}")
        rows = []
        for i, rec in enumerate(reader):
            if len(rec) != len(schema.columns):
                raise CsvError(f"{path}: wrong cell count", row=i, col=None)
            rows.append(
                tuple(
                    parse_cell(cell, kind, i, name)
                    for cell, (name, kind) in zip(rec, schema.columns)
                )
            )
    return Table(schema, rows)


def write_csv(path: str, table: Table) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(table.schema.names)
        for r in table.rows:
            writer.writerow([render_cell(v) for v in r])


@dataclass
class ExecutionContext:
    """Holds source tables and capture state for one execution."""

    tables: dict[str, Table]
    materialize: dict[str, list[str] | None] = field(default_factory=dict)
    captured: dict[str, Table] = field(default_factory=dict)
    keep_all: bool = False
    outputs: dict[str, Table] = field(default_factory=dict)


def load_context(p: Pipeline) -> ExecutionContext:
    tables = {name: load_csv(decl.path, decl.schema) for name, decl in p.tables.items()}
    return ExecutionContext(tables=tables)


def execute(p: Pipeline, ctx: ExecutionContext) -> Table:
    """Run the pipeline; returns the output table. Capture points listed
    in ``ctx.materialize`` are copied (column-projected) into ``ctx.captured``."""
    results: dict[str, Table] = {}

    def resolve(ref: str) -> Table:
        if ref in results:
            return results[ref]
        if ref in ctx.tables:
            return ctx.tables[ref]
        raise ValidationError(f"unresolved reference {ref!r}")

    for op in p.op_order():
        ins = [resolve(r) for r in op.inputs]
        out = eval_operator(op, ins, ctx)
        results[op.id] = out
        if ctx.keep_all:
            ctx.outputs[op.id] = out
        if op.id in ctx.materialize:
            cols = ctx.materialize[op.id]
            ctx.captured[op.id] = out if cols is None else out.project(list(cols))
    return resolve(p.output)


# ---------------------------------------------------------------------------
# operator semantics
# ---------------------------------------------------------------------------


def eval_operator(op: Operator, ins: list[Table], ctx: ExecutionContext) -> Table:
    kind = op.kind
    try:
        if kind == "Filter":
            return _filter(op, ins[0])
        if kind == "InnerJoin":
            return _inner_join(op, ins[0], ins[1])
        if kind == "LeftOuterJoin":
            return _left_outer_join(op, ins[0], ins[1])
        if kind == "RowTransform":
            return _row_transform(op, ins[0])
        if kind == "DropColumn":
            return ins[0].project(list(op.params["keep"]))
        if kind == "Reorder":
            return Table(ins[0].schema, _sorted_rows(ins[0], op.params["keys"]))
        if kind == "TopK":
            return Table(ins[0].schema, _sorted_rows(ins[0], op.params["keys"])[: op.params["k"]])
        if kind == "Union":
            return Table(ins[0].schema, list(ins[0].rows) + list(ins[1].rows))
        if kind == "Intersect":
            right = ins[1].value_set()
            return Table(ins[0].schema, [r for r in ins[0].rows if r in right])
        if kind == "GroupBy":
            return _group_by(op, ins[0])
        if kind == "Pivot":
            return _pivot(op, ins[0])
        if kind == "UnPivot":
            return _unpivot(op, ins[0])
        if kind == "RowExpand":
            return _row_expand(op, ins[0])
        if kind == "WindowOp":
            return _window(op, ins[0])
        if kind == "GroupedMap":
            return _grouped_map(op, ins[0], ctx)
        if kind in ("SemiJoin", "AntiJoin"):
            return _semi_anti(op, ins[0], ctx, keep_matching=(kind == "SemiJoin"))
        if kind == "SubQuery":
            return _subquery(op, ins[0], ctx)
    except ZeroDivisionError:
        raise ExecError("division by zero", op_id=op.id) from None
    raise ValidationError(f"unknown operator kind {kind!r}")


def _filter(op: Operator, t: Table) -> Table:
    pred = op.params["predicate"]
    names = t.schema.names
    return Table(t.schema, [r for r in t.rows if eval_expr(pred, dict(zip(names, r))) is True])


def _inner_join(op: Operator, left: Table, right: Table) -> Table:
    pred = op.params["predicate"]
    schema = Schema(left.schema.columns + right.schema.columns)
    names = schema.names
    out = []
    for l in left.rows:
        for r in right.rows:
            combined = l + r
            if eval_expr(pred, dict(zip(names, combined))) is True:
                out.append(combined)
    return Table(schema, out)


def _left_outer_join(op: Operator, left: Table, right: Table) -> Table:
    pred = op.params["predicate"]
    schema = Schema(left.schema.columns + right.schema.columns)
    names = schema.names
    nulls = (None,) * len(right.schema.columns)
    out = []
    for l in left.rows:
        matched = False
        for r in right.rows:
            combined = l + r
            if eval_expr(pred, dict(zip(names, combined))) is True:
                out.append(combined)
                matched = True
        if not matched:
            out.append(l + nulls)
    return Table(schema, out)


def _row_transform(op: Operator, t: Table) -> Table:
    cols = op.params["columns"]
    schema_env = t.schema.names
    out_schema = []
    from .exprs import check_expr

    env = t.schema.env()
    for name, expr in cols:
        out_schema.append((name, check_expr(expr, env)))
    rows = []
    for r in t.rows:
        e = dict(zip(schema_env, r))
        rows.append(tuple(eval_expr(expr, e) for _, expr in cols))
    return Table(Schema(tuple(out_schema)), rows)


def _sort_key(col_idx: int):
    def key(row):
        v = row[col_idx]
        return (0, 0) if v is None else (1, v)

    return key


def _sorted_rows(t: Table, keys) -> list[tuple]:
    rows = list(t.rows)
    # stable multi-key sort: apply keys last-to-first; Nulls sort smallest
    for col, asc in reversed(list(keys)):
        idx = t.schema.index(col)
        rows.sort(key=_sort_key(idx), reverse=not asc)
    return rows


def _agg_value(func: str, values: list):
    present = [v for v in values if v is not None]
    if func == "count":
        return len(values)
    if not present:
        return 0 if func == "sum" else None
    if func == "sum":
        return sum(present)
    if func == "min":
        return min(present)
    if func == "max":
        return max(present)
    if func == "avg":
        return sum(present) / len(present)
    raise ValidationError(f"unknown aggregate {func!r}")


def _group_rows(t: Table, group_cols) -> dict[tuple, list[tuple]]:
    idx = [t.schema.index(c) for c in group_cols]
    groups: dict[tuple, list[tuple]] = {}
    for r in t.rows:
        groups.setdefault(tuple(r[i] for i in idx), []).append(r)
    return groups


def _group_by(op: Operator, t: Table) -> Table:
    group_cols = list(op.params["group"])
    aggs: tuple[Agg, ...] = op.params["aggs"]
    names = t.schema.names
    env = t.schema.env()
    out_cols = [(g, t.schema.kind(g)) for g in group_cols]
    out_cols += [(a.out, a.result_kind(env)) for a in aggs]
    groups = _group_rows(t, group_cols)
    if not group_cols and not groups:
        groups = {(): []}  # global aggregate over empty input still yields one row
    out = []
    for key, rows in groups.items():
        cells = list(key)
        for a in aggs:
            if a.func == "count":
                cells.append(len(rows))
            else:
                vals = [eval_expr(a.expr, dict(zip(names, r))) for r in rows]
                cells.append(_agg_value(a.func, vals))
        out.append(tuple(cells))
    return Table(Schema(tuple(out_cols)), out)


def _pivot(op: Operator, t: Table) -> Table:
    from .pipeline import infer_schema

    schema = infer_schema(op, [t.schema])
    i_idx = t.schema.index(op.params["index"])
    k_idx = t.schema.index(op.params["key"])
    v_idx = t.schema.index(op.params["value"])
    func = op.params["func"]
    groups: dict[object, list[tuple]] = {}
    for r in t.rows:
        groups.setdefault(r[i_idx], []).append(r)
    out = []
    for index_value, rows in groups.items():
        cells = [index_value]
        for _out_name, key_value in op.params["keys"]:
            vals = [r[v_idx] for r in rows if r[k_idx] is not None and r[k_idx] == key_value]
            cells.append(_agg_value(func, vals) if vals or func == "count" else None)
        out.append(tuple(cells))
    return Table(schema, out)


def _unpivot(op: Operator, t: Table) -> Table:
    from .pipeline import infer_schema

    schema = infer_schema(op, [t.schema])
    index_idx = [t.schema.index(c) for c in op.params["index"]]
    out = []
    for r in t.rows:
        prefix = tuple(r[i] for i in index_idx)
        for c in op.params["melt"]:
            out.append(prefix + (c, r[t.schema.index(c)]))
    return Table(schema, out)


def _row_expand(op: Operator, t: Table) -> Table:
    from .pipeline import infer_schema

    schema = infer_schema(op, [t.schema])
    cols = op.params["columns"]
    count = len(cols[0][1].items)
    names = t.schema.names
    out = []
    for r in t.rows:
        env = dict(zip(names, r))
        tuples = [eval_expr(expr, env) for _, expr in cols]
        for j in range(count):
            out.append(tuple(tup[j] for tup in tuples))
    return Table(schema, out)


def _window(op: Operator, t: Table) -> Table:
    from .pipeline import infer_schema

    schema = infer_schema(op, [t.schema])
    idx = t.schema.index(op.params["index"])
    size = op.params["size"]
    names = t.schema.names
    out = []
    for r in t.rows:
        base = r[idx]
        if base is None:
            window: list[tuple] = []
        else:
            window = [w for w in t.rows if w[idx] is not None and base <= w[idx] <= base + size]
        cells = list(r)
        for a in op.params["aggs"]:
            if a.func == "count":
                cells.append(len(window))
            else:
                vals = [eval_expr(a.expr, dict(zip(names, w))) for w in window]
                cells.append(_agg_value(a.func, vals))
        out.append(tuple(cells))
    return Table(schema, out)


def run_sub(sub: SubPipe, source: Table, ctx: ExecutionContext, params: dict) -> Table:
    """Run a sub-pipeline against a bound source table with correlated
    parameter values."""
    results: dict[str, Table] = {sub.source: source}
    for sop in sub.ops:
        ins = [results[r] if r in results else ctx.tables[r] for r in sop.inputs]
        results[sop.id] = _eval_sub_operator(sop, ins, ctx, params)
    return results[sub.output]


def _eval_sub_operator(op: Operator, ins: list[Table], ctx: ExecutionContext, params: dict) -> Table:
    # Correlated params reach expression evaluation by temporary binding.
    if op.kind == "Filter":
        pred = op.params["predicate"]
        t = ins[0]
        names = t.schema.names
        return Table(t.schema, [r for r in t.rows if eval_expr(pred, dict(zip(names, r)), params) is True])
    if op.kind == "RowTransform":
        cols = op.params["columns"]
        t = ins[0]
        from .exprs import check_expr

        env = t.schema.env()
        out_schema = tuple((n, check_expr(e, env, None)) for n, e in cols)
        rows = []
        for r in t.rows:
            e = dict(zip(t.schema.names, r))
            rows.append(tuple(eval_expr(expr, e, params) for _, expr in cols))
        return Table(Schema(out_schema), rows)
    # remaining kinds do not embed correlated params in their expressions
    return eval_operator(op, ins, ctx)


def _sub_source(op: Operator, outer: Table, ctx: ExecutionContext) -> Table:
    sub: SubPipe = op.params["sub"]
    if sub.source == GROUP_SOURCE:
        raise ValidationError(f"{op.kind} cannot read {GROUP_SOURCE!r}")
    return ctx.tables[sub.source]


def _semi_anti(op: Operator, outer: Table, ctx: ExecutionContext, keep_matching: bool) -> Table:
    sub: SubPipe = op.params["sub"]
    corr = op.params["correlate"]
    source = _sub_source(op, outer, ctx)
    cache: dict[tuple, bool] = {}
    out = []
    for r in outer.rows:
        env = row_env(outer.schema, r)
        binding = tuple(env[c] for c in corr.values())
        if binding in cache:
            nonempty = cache[binding]
        else:
            params = {p: env[c] for p, c in corr.items()}
            nonempty = len(run_sub(sub, source, ctx, params)) > 0
            cache[binding] = nonempty
        if nonempty == keep_matching:
            out.append(r)
    return Table(outer.schema, out)


def _subquery(op: Operator, outer: Table, ctx: ExecutionContext) -> Table:
    from .pipeline import infer_schema

    sub: SubPipe = op.params["sub"]
    corr = op.params["correlate"]
    source = _sub_source(op, outer, ctx)
    col = op.params["column"]
    cache: dict[tuple, object] = {}
    out = []
    col_pos = None
    for r in outer.rows:
        env = row_env(outer.schema, r)
        binding = tuple(env[c] for c in corr.values())
        if binding in cache:
            value = cache[binding]
        else:
            params = {p: env[c] for p, c in corr.items()}
            result = run_sub(sub, source, ctx, params)
            if col_pos is None:
                col_pos = result.schema.index(col)
            value = result.rows[0][col_pos] if result.rows else None
            cache[binding] = value
        out.append(r + (value,))
    # schema: outer columns plus the scalar value column
    sub_schema_probe = run_sub(sub, Table(source.schema, []), ctx, {p: None for p in corr})
    schema = Schema(outer.schema.columns + ((op.params["as"], sub_schema_probe.schema.kind(col)),))
    return Table(schema, out)


def _grouped_map(op: Operator, t: Table, ctx: ExecutionContext) -> Table:
    sub: SubPipe = op.params["sub"]
    group_cols = list(op.params["group"])
    groups = _group_rows(t, group_cols)
    out_rows = []
    sub_schema = None
    for key, rows in groups.items():
        result = run_sub(sub, Table(t.schema, rows), ctx, {})
        sub_schema = result.schema
        for r in result.rows:
            out_rows.append(tuple(key) + r)
    if sub_schema is None:
        result = run_sub(sub, Table(t.schema, []), ctx, {})
        sub_schema = result.schema
    cols = tuple((g, t.schema.kind(g)) for g in group_cols) + sub_schema.columns
    return Table(Schema(cols), out_rows)


# ---------------------------------------------------------------------------
# predicate application
# ---------------------------------------------------------------------------


def select_positions(pred: Expr, table: Table, params: dict | None = None, sets: dict | None = None) -> list[int]:
    """Positions of rows satisfying a concretized predicate, in order.
    Every parameter and set variable must be bound."""
    params = params or {}
    sets = sets or {}
    missing = params_of(pred) - set(params)
    if missing:
        raise UnboundParameterError(f"unbound parameters: {sorted(missing)}")
    missing_sets = setvars_of(pred) - set(sets)
    if missing_sets:
        raise UnboundParameterError(f"unbound set variables: {sorted(missing_sets)}")
    names = table.schema.names
    return [
        i for i, r in enumerate(table.rows) if eval_expr(pred, dict(zip(names, r)), params, sets) is True
    ]


def apply_predicate(pred: Expr, table: Table, params: dict | None = None, sets: dict | None = None) -> Table:
    pos = select_positions(pred, table, params, sets)
    return Table(table.schema, [table.rows[i] for i in pos])

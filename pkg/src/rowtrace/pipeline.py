"""Pipeline representation: operators, validation, schema propagation,
and the JSON document format.

A pipeline is a DAG over named source tables. Operators are listed in
topological order (each input refers to a source table or an earlier
operator). Four kinds carry a nested sub-pipeline over a single bound
source with optional correlated parameters bound per outer row.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import PipelineSyntaxError, ValidationError
from .exprs import (
    Expr,
    Tup,
    check_expr,
    cols_of,
    params_of,
    parse_expr,
    print_expr,
)
from .tables import Schema
from .values import Kind

GROUP_SOURCE = "@group"

AGG_FUNCS = ("count", "sum", "min", "max", "avg")

# Kinds whose precise per-row origin cannot be a single input subset;
# their row-selection pushdown is always a superset.
SUPERSET_ONLY = ("UnPivot", "RowExpand", "WindowOp")

KIND_ARITY = {
    "Filter": 1,
    "InnerJoin": 2,
    "RowTransform": 1,
    "DropColumn": 1,
    "Reorder": 1,
    "TopK": 1,
    "Union": 2,
    "Intersect": 2,
    "GroupBy": 1,
    "Pivot": 1,
    "UnPivot": 1,
    "RowExpand": 1,
    "LeftOuterJoin": 2,
    "WindowOp": 1,
    "GroupedMap": 1,
    "SemiJoin": 1,
    "AntiJoin": 1,
    "SubQuery": 1,
}


@dataclass(frozen=True)
class Agg:
    out: str
    func: str
    expr: Expr | None = None

    def result_kind(self, env: dict[str, Kind]) -> Kind:
        if self.func == "count":
            return Kind.INT
        k = check_expr(self.expr, env)
        if self.func == "avg":
            return Kind.FLOAT
        if self.func == "sum":
            if k is not None and k not in (Kind.INT, Kind.FLOAT):
                raise ValidationError("sum needs a numeric expression")
            return k or Kind.INT
        return k or Kind.INT  # min / max keep the expression kind


@dataclass(frozen=True)
class SubPipe:
    source: str
    ops: tuple["Operator", ...]
    output: str


@dataclass(frozen=True)
class Operator:
    id: str
    kind: str
    inputs: tuple[str, ...]
    params: dict

    def sub(self) -> SubPipe | None:
        return self.params.get("sub")

    def correlate(self) -> dict[str, str]:
        return self.params.get("correlate", {})


@dataclass(frozen=True)
class TableDecl:
    name: str
    path: str
    schema: Schema


@dataclass
class Pipeline:
    tables: dict[str, TableDecl]
    ops: dict[str, Operator]
    output: str
    schemas: dict[str, Schema] = field(default_factory=dict)

    def op_order(self) -> list[Operator]:
        return list(self.ops.values())

    def schema_of(self, ref: str) -> Schema:
        return self.schemas[ref]

    def output_schema(self) -> Schema:
        return self.schemas[self.output]

    def consumers(self, ref: str) -> list[Operator]:
        return [op for op in self.ops.values() if ref in op.inputs]

    def total_op_count(self) -> int:
        n = 0
        for op in self.ops.values():
            n += 1
            sub = op.sub()
            if sub is not None:
                n += len(sub.ops)
        return n


# ---------------------------------------------------------------------------
# schema propagation
# ---------------------------------------------------------------------------


def infer_schema(
    op: Operator,
    in_schemas: list[Schema],
    param_kinds: dict[str, Kind] | None = None,
    sub_out: Schema | None = None,
) -> Schema:
    """Output schema of a single operator; validates params along the way.
    ``sub_out`` is the resolved output schema of a nested sub-pipeline."""
    kind = op.kind
    pk = param_kinds or {}

    if kind == "Filter":
        env = in_schemas[0].env()
        _require_bool(check_expr(op.params["predicate"], env, pk), "Filter predicate")
        return in_schemas[0]

    if kind in ("InnerJoin", "LeftOuterJoin"):
        left, right = in_schemas
        overlap = set(left.names) & set(right.names)
        if overlap:
            raise ValidationError(f"{kind} inputs share column names {sorted(overlap)}")
        joined = Schema(left.columns + right.columns)
        _require_bool(check_expr(op.params["predicate"], joined.env(), pk), f"{kind} predicate")
        return joined

    if kind == "RowTransform":
        env = in_schemas[0].env()
        cols = []
        for name, expr in op.params["columns"]:
            k = check_expr(expr, env, pk)
            if k is None:
                raise ValidationError(f"cannot infer kind of computed column {name!r}")
            cols.append((name, k))
        return Schema(tuple(cols))

    if kind == "DropColumn":
        return in_schemas[0].project(list(op.params["keep"]))

    if kind in ("Reorder", "TopK"):
        for col, _asc in op.params["keys"]:
            in_schemas[0].kind(col)
        if kind == "TopK":
            k = op.params["k"]
            if not isinstance(k, int) or k < 1:
                raise ValidationError("TopK needs k >= 1")
        return in_schemas[0]

    if kind in ("Union", "Intersect"):
        a, b = in_schemas
        if a.columns != b.columns:
            raise ValidationError(f"{kind} inputs must have identical schemas")
        return a

    if kind == "GroupBy":
        env = in_schemas[0].env()
        cols = []
        for g in op.params["group"]:
            cols.append((g, in_schemas[0].kind(g)))
        for agg in op.params["aggs"]:
            _check_agg(agg)
            cols.append((agg.out, agg.result_kind(env)))
        if not cols:
            raise ValidationError("GroupBy needs at least one group column or aggregate")
        return Schema(tuple(cols))

    if kind == "Pivot":
        s = in_schemas[0]
        value_kind = s.kind(op.params["value"])
        s.kind(op.params["key"])
        func = op.params["func"]
        if func not in AGG_FUNCS:
            raise ValidationError(f"unknown aggregate {func!r}")
        if func == "count":
            cell_kind = Kind.INT
        elif func == "avg":
            cell_kind = Kind.FLOAT
        else:
            cell_kind = value_kind
        cols = [(op.params["index"], s.kind(op.params["index"]))]
        for out_name, _key_value in op.params["keys"]:
            cols.append((out_name, cell_kind))
        return Schema(tuple(cols))

    if kind == "UnPivot":
        s = in_schemas[0]
        melt = list(op.params["melt"])
        if not melt:
            raise ValidationError("UnPivot needs at least one melted column")
        kinds = {s.kind(c) for c in melt}
        if len(kinds) > 1:
            raise ValidationError("UnPivot melted columns must share one kind")
        cols = [(c, s.kind(c)) for c in op.params["index"]]
        cols.append((op.params["var"], Kind.STR))
        cols.append((op.params["value"], kinds.pop()))
        return Schema(tuple(cols))

    if kind == "RowExpand":
        env = in_schemas[0].env()
        count = None
        cols = []
        for name, expr in op.params["columns"]:
            if not isinstance(expr, Tup):
                raise ValidationError("RowExpand column expressions must be (tuple ...)")
            if count is None:
                count = len(expr.items)
            elif count != len(expr.items):
                raise ValidationError("RowExpand tuples must share one length")
            k = check_expr(expr, env, pk)
            if k is None:
                raise ValidationError(f"cannot infer kind of expanded column {name!r}")
            cols.append((name, k))
        return Schema(tuple(cols))

    if kind == "WindowOp":
        s = in_schemas[0]
        if s.kind(op.params["index"]) != Kind.INT:
            raise ValidationError("WindowOp index column must be int")
        size = op.params["size"]
        if not isinstance(size, int) or size < 0:
            raise ValidationError("WindowOp needs size >= 0")
        env = s.env()
        cols = list(s.columns)
        for agg in op.params["aggs"]:
            _check_agg(agg)
            cols.append((agg.out, agg.result_kind(env)))
        return Schema(tuple(cols))

    if kind == "GroupedMap":
        s = in_schemas[0]
        for g in op.params["group"]:
            s.kind(g)
        if sub_out is None:
            raise ValidationError("GroupedMap needs a sub-pipeline")
        cols = [(g, s.kind(g)) for g in op.params["group"]]
        overlap = set(op.params["group"]) & set(sub_out.names)
        if overlap:
            raise ValidationError(f"GroupedMap sub-pipeline re-emits group columns {sorted(overlap)}")
        return Schema(tuple(cols) + sub_out.columns)

    if kind in ("SemiJoin", "AntiJoin"):
        return in_schemas[0]

    if kind == "SubQuery":
        s = in_schemas[0]
        if sub_out is None:
            raise ValidationError("SubQuery needs a sub-pipeline")
        col = op.params["column"]
        out_name = op.params["as"]
        if s.has(out_name):
            raise ValidationError(f"SubQuery output column {out_name!r} already exists")
        return Schema(s.columns + ((out_name, sub_out.kind(col)),))

    raise ValidationError(f"unknown operator kind {kind!r}")


# ---------------------------------------------------------------------------
# whole-pipeline validation
# ---------------------------------------------------------------------------


def validate_pipeline(p: Pipeline) -> Pipeline:
    """Check references, arities, and kinds; fill ``p.schemas``."""
    seen: dict[str, Schema] = {}
    for name, decl in p.tables.items():
        if name in seen:
            raise ValidationError(f"duplicate name {name!r}")
        seen[name] = decl.schema
    for op in p.ops.values():
        if op.id in seen:
            raise ValidationError(f"duplicate name {op.id!r}")
        if op.kind not in KIND_ARITY:
            raise ValidationError(f"unknown operator kind {op.kind!r}")
        if len(op.inputs) != KIND_ARITY[op.kind]:
            raise ValidationError(
                f"{op.kind} takes {KIND_ARITY[op.kind]} inputs, got {len(op.inputs)} ({op.id})"
            )
        in_schemas = []
        for ref in op.inputs:
            if ref not in seen:
                raise ValidationError(f"operator {op.id} references unknown input {ref!r}")
            in_schemas.append(seen[ref])
        sub_out = None
        if op.sub() is not None:
            sub_out = _validate_sub(p, op, in_schemas[0])
        seen[op.id] = infer_schema(op, in_schemas, sub_out=sub_out)
    if p.output not in seen:
        raise ValidationError(f"output references unknown node {p.output!r}")
    if not p.ops:
        raise ValidationError("pipeline has no operators")
    p.schemas = seen
    return p


def _validate_sub(p: Pipeline, op: Operator, outer_schema: Schema) -> Schema:
    sub = op.sub()
    corr = op.correlate()
    if op.kind == "GroupedMap":
        if corr:
            raise ValidationError("GroupedMap does not take correlated parameters")
        if sub.source != GROUP_SOURCE:
            raise ValidationError(f"GroupedMap sub-pipeline must read {GROUP_SOURCE!r}")
        source_schema = outer_schema
    else:
        if sub.source == GROUP_SOURCE:
            raise ValidationError(f"{op.kind} sub-pipeline cannot read {GROUP_SOURCE!r}")
        if sub.source not in p.tables:
            raise ValidationError(f"sub-pipeline source {sub.source!r} is not a source table")
        source_schema = p.tables[sub.source].schema
    param_kinds = {}
    for pname, col in corr.items():
        param_kinds[pname] = outer_schema.kind(col)

    seen: dict[str, Schema] = {sub.source: source_schema}
    for sop in sub.ops:
        if sop.id in seen or sop.id in p.tables or sop.id in p.ops:
            raise ValidationError(f"duplicate name {sop.id!r} in sub-pipeline")
        in_schemas = []
        for ref in sop.inputs:
            if ref not in seen:
                raise ValidationError(f"sub-operator {sop.id} references unknown input {ref!r}")
            in_schemas.append(seen[ref])
        nested_out = None
        if sop.sub() is not None:
            nested_out = _validate_sub(p, sop, in_schemas[0])
        seen[sop.id] = infer_schema(sop, in_schemas, param_kinds=param_kinds, sub_out=nested_out)
    if sub.output not in seen:
        raise ValidationError(f"sub-pipeline output {sub.output!r} unknown")
    return seen[sub.output]


def sub_schemas(p: Pipeline, op: Operator) -> dict[str, Schema]:
    """Schemas of every node inside an operator's sub-pipeline."""
    sub = op.sub()
    outer_schema = p.schemas[op.inputs[0]]
    source_schema = outer_schema if sub.source == GROUP_SOURCE else p.tables[sub.source].schema
    param_kinds = {pname: outer_schema.kind(col) for pname, col in op.correlate().items()}
    seen = {sub.source: source_schema}
    for sop in sub.ops:
        in_schemas = [seen[r] for r in sop.inputs]
        seen[sop.id] = infer_schema(sop, in_schemas, param_kinds=param_kinds)
    return seen


# ---------------------------------------------------------------------------
# document format
# ---------------------------------------------------------------------------


def parse_pipeline(text: str, base_dir: str | None = None) -> Pipeline:
    """Parse and validate a pipeline document (JSON text)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PipelineSyntaxError(f"not a valid pipeline document: {exc}") from None
    if not isinstance(doc, dict):
        raise PipelineSyntaxError("pipeline document must be an object")
    for key in ("tables", "operators", "output"):
        if key not in doc:
            raise PipelineSyntaxError(f"pipeline document is missing {key!r}")

    tables: dict[str, TableDecl] = {}
    for t in doc["tables"]:
        try:
            schema = Schema(tuple((c, Kind.parse(k)) for c, k in t["schema"]))
            name = t["name"]
            path = t.get("path", "")
        except (KeyError, TypeError, ValueError) as exc:
            raise PipelineSyntaxError(f"bad table declaration: {exc}") from None
        if base_dir and path and not path.startswith("/"):
            path = f"{base_dir}/{path}"
        tables[name] = TableDecl(name, path, schema)

    ops: dict[str, Operator] = {}
    for o in doc["operators"]:
        op = _parse_operator(o)
        if op.id in ops:
            raise PipelineSyntaxError(f"duplicate operator id {op.id!r}")
        ops[op.id] = op

    p = Pipeline(tables=tables, ops=ops, output=doc["output"])
    return validate_pipeline(p)


def load_pipeline(path: str) -> Pipeline:
    import os

    with open(path, encoding="utf-8") as f:
        text = f.read()
    return parse_pipeline(text, base_dir=os.path.dirname(os.path.abspath(path)))


def _parse_operator(o: dict) -> Operator:
    try:
        op_id, kind, inputs = o["id"], o["kind"], tuple(o["inputs"])
        raw = dict(o.get("params", {}))
    except (KeyError, TypeError) as exc:
        raise PipelineSyntaxError(f"bad operator entry: {exc}") from None
    params: dict = {}
    try:
        if kind in ("Filter", "InnerJoin", "LeftOuterJoin"):
            params["predicate"] = parse_expr(raw["predicate"])
        elif kind in ("RowTransform", "RowExpand"):
            params["columns"] = tuple((n, parse_expr(e)) for n, e in raw["columns"])
        elif kind == "DropColumn":
            params["keep"] = tuple(raw["keep"])
        elif kind in ("Reorder", "TopK"):
            params["keys"] = tuple(_parse_sort_key(k) for k in raw["keys"])
            if kind == "TopK":
                params["k"] = raw["k"]
        elif kind in ("Union", "Intersect"):
            pass
        elif kind == "GroupBy":
            params["group"] = tuple(raw["group"])
            params["aggs"] = tuple(_parse_agg(a) for a in raw["aggs"])
        elif kind == "Pivot":
            params["index"] = raw["index"]
            params["key"] = raw["key"]
            params["value"] = raw["value"]
            params["func"] = raw["func"]
            params["keys"] = tuple((n, v) for n, v in raw["keys"])
        elif kind == "UnPivot":
            params["index"] = tuple(raw["index"])
            params["melt"] = tuple(raw["melt"])
            params["var"] = raw["var"]
            params["value"] = raw["value"]
        elif kind == "WindowOp":
            params["index"] = raw["index"]
            params["size"] = raw["size"]
            params["aggs"] = tuple(_parse_agg(a) for a in raw["aggs"])
        elif kind == "GroupedMap":
            params["group"] = tuple(raw["group"])
            params["sub"] = _parse_sub(raw["sub"])
        elif kind in ("SemiJoin", "AntiJoin"):
            params["sub"] = _parse_sub(raw["sub"])
            params["correlate"] = dict(raw.get("correlate", {}))
        elif kind == "SubQuery":
            params["sub"] = _parse_sub(raw["sub"])
            params["correlate"] = dict(raw.get("correlate", {}))
            params["column"] = raw["column"]
            params["as"] = raw["as"]
        else:
            raise PipelineSyntaxError(f"unknown operator kind {kind!r}")
    except (KeyError, TypeError, ValueError) as exc:
        raise PipelineSyntaxError(f"bad params for operator {op_id!r}: {exc}") from None
    return Operator(id=op_id, kind=kind, inputs=inputs, params=params)


def _parse_sort_key(k) -> tuple[str, bool]:
    col, direction = k
    if direction not in ("asc", "desc"):
        raise PipelineSyntaxError(f"sort direction must be asc or desc, got {direction!r}")
    return col, direction == "asc"


def _parse_agg(a) -> Agg:
    if len(a) == 2:
        out, func = a
        return Agg(out, func, None)
    out, func, expr = a
    return Agg(out, func, parse_expr(expr))


def _parse_sub(s: dict) -> SubPipe:
    ops = tuple(_parse_operator(o) for o in s["operators"])
    return SubPipe(source=s["source"], ops=ops, output=s["output"])


def pipeline_to_doc(p: Pipeline) -> dict:
    return {
        "tables": [
            {
                "name": t.name,
                "path": t.path,
                "schema": [[c, k.value] for c, k in t.schema.columns],
            }
            for t in p.tables.values()
        ],
        "operators": [_op_to_doc(op) for op in p.ops.values()],
        "output": p.output,
    }


def _op_to_doc(op: Operator) -> dict:
    raw: dict = {}
    kind = op.kind
    if kind in ("Filter", "InnerJoin", "LeftOuterJoin"):
        raw["predicate"] = print_expr(op.params["predicate"])
    elif kind in ("RowTransform", "RowExpand"):
        raw["columns"] = [[n, print_expr(e)] for n, e in op.params["columns"]]
    elif kind == "DropColumn":
        raw["keep"] = list(op.params["keep"])
    elif kind in ("Reorder", "TopK"):
        raw["keys"] = [[c, "asc" if asc else "desc"] for c, asc in op.params["keys"]]
        if kind == "TopK":
            raw["k"] = op.params["k"]
    elif kind == "GroupBy":
        raw["group"] = list(op.params["group"])
        raw["aggs"] = [_agg_to_doc(a) for a in op.params["aggs"]]
    elif kind == "Pivot":
        raw.update(
            index=op.params["index"],
            key=op.params["key"],
            value=op.params["value"],
            func=op.params["func"],
            keys=[[n, v] for n, v in op.params["keys"]],
        )
    elif kind == "UnPivot":
        raw.update(
            index=list(op.params["index"]),
            melt=list(op.params["melt"]),
            var=op.params["var"],
            value=op.params["value"],
        )
    elif kind == "WindowOp":
        raw.update(index=op.params["index"], size=op.params["size"])
        raw["aggs"] = [_agg_to_doc(a) for a in op.params["aggs"]]
    elif kind == "GroupedMap":
        raw["group"] = list(op.params["group"])
        raw["sub"] = _sub_to_doc(op.params["sub"])
    elif kind in ("SemiJoin", "AntiJoin"):
        raw["sub"] = _sub_to_doc(op.params["sub"])
        raw["correlate"] = dict(op.params["correlate"])
    elif kind == "SubQuery":
        raw["sub"] = _sub_to_doc(op.params["sub"])
        raw["correlate"] = dict(op.params["correlate"])
        raw["column"] = op.params["column"]
        raw["as"] = op.params["as"]
    return {"id": op.id, "kind": kind, "inputs": list(op.inputs), "params": raw}


def _agg_to_doc(a: Agg) -> list:
    if a.expr is None:
        return [a.out, a.func]
    return [a.out, a.func, print_expr(a.expr)]


def _sub_to_doc(s: SubPipe) -> dict:
    return {"source": s.source, "operators": [_op_to_doc(o) for o in s.ops], "output": s.output}


def print_pipeline(p: Pipeline) -> str:
    return json.dumps(pipeline_to_doc(p), indent=2)


def _check_agg(agg: Agg):
    if agg.func not in AGG_FUNCS:
        raise ValidationError(f"unknown aggregate {agg.func!r}")
    if agg.func == "count":
        if agg.expr is not None:
            raise ValidationError("count takes no expression")
    elif agg.expr is None:
        raise ValidationError(f"{agg.func} needs an expression")


def _require_bool(kind, what: str):
    if kind is not None and kind != Kind.BOOL:
        raise ValidationError(f"{what} must be boolean, got {kind.value}")

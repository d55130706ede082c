"""Command line front end.

Six subcommands cover the full workflow: ``infer`` plans lineage for a
pipeline and writes the plan to a JSON file, ``exec`` runs the pipeline
and captures the intermediates the plan asked for, ``query`` answers a
lineage question for one output row, ``verify`` reports how far each
operator's selection could be pushed and why pushes failed, ``oracle``
brute-forces ground truth on tiny inputs, and ``compare`` scores the
cheap strategies against that ground truth.

Exit codes: 0 on success, 1 for user errors (bad arguments, missing
files, unknown rows), 2 for internal failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import datetime, timezone

from . import planner
from .errors import EngineError
from .executor import ExecutionContext, execute, load_context, load_csv, write_csv
from .exprs import eval_expr
from .iterative import phases_from_doc, phases_to_doc, plan_phases, pushdown_superset
from .lineage import query, query_iterative, render
from .oracle import oracle_pipeline_lineage, positions_of
from .pipeline import Pipeline, load_pipeline
from .planner import (
    LineagePlan,
    _sub_source_schema,
    infer,
    optimize_intermediates,
    plan_from_doc,
    plan_to_doc,
    rewrite_for_materialization,
)
from .pushdown import REQUIRE_EXACT, push_down
from .symbolic import Verdict
from .tables import Schema, row_env
from .values import render_cell, parse_cell


class UsageError(Exception):
    """Bad invocation: wrong flags, malformed rows, missing files."""


# ---------------------------------------------------------------------------
# small helpers
# ---------------------------------------------------------------------------


def _read_json(path: str) -> dict:
    if not os.path.exists(path):
        raise UsageError(f"no such file: {path}")
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as e:
            raise UsageError(f"{path} is not valid JSON: {e}") from None


def _write_json(path: str, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _default_plan_path(pipeline_path: str) -> str:
    base = pipeline_path
    for suffix in (".pipeline.json", ".json"):
        if base.endswith(suffix):
            base = base[: -len(suffix)]
            break
    return base + ".plan.json"


def _capture_dir(plan_path: str, override: str | None) -> str:
    return override if override is not None else plan_path + ".captures"


def _parse_row(text: str, schema: Schema) -> tuple:
    """Parse ``col=value,...`` against the output schema. ``null`` (or an
    empty value) stands for a missing cell."""
    given: dict[str, str] = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        name, eq, raw = part.partition("=")
        if not eq:
            raise UsageError(f"bad --row item {part!r}; expected col=value")
        name = name.strip()
        if not schema.has(name):
            raise UsageError(
                f"--row names {name!r}; output columns are {', '.join(schema.names)}"
            )
        given[name] = raw.strip()
    missing = [c for c in schema.names if c not in given]
    if missing:
        raise UsageError(f"--row is missing {', '.join(missing)}")
    row = []
    for name, kind in schema.columns:
        raw = given[name]
        if raw == "null":
            row.append(None)
            continue
        try:
            row.append(parse_cell(raw, kind, col=name))
        except EngineError as e:
            raise UsageError(f"--row value for {name!r}: {e}") from None
    return tuple(row)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_infer(args: argparse.Namespace) -> int:
    p = load_pipeline(args.pipeline)
    out_path = args.out if args.out is not None else _default_plan_path(args.pipeline)
    doc: dict = {
        "meta": {
            "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "inference_calls": planner.INFER_CALLS,
            "pipeline": os.path.abspath(args.pipeline),
        }
    }
    if args.no_intermediates:
        phases = plan_phases(p)
        doc["iterative"] = phases_to_doc(phases)
        doc["meta"]["inference_calls"] = planner.INFER_CALLS
        _write_json(out_path, doc)
        print(f"plan written to {out_path}")
        mode = "precise" if phases.phase1.exact and not phases.flags else "superset"
        print(f"mode={mode} (no intermediates)")
        for flag in phases.flags:
            print(f"flag={flag}")
    else:
        plan = infer(p)
        plan = optimize_intermediates(p, plan, load_context(p))
        doc["precise"] = plan_to_doc(plan)
        doc["meta"]["inference_calls"] = planner.INFER_CALLS
        _write_json(out_path, doc)
        print(f"plan written to {out_path}")
        print(f"mode={'precise' if plan.precise else 'superset'}")
        for m in plan.materializations:
            print(f"capture {m.op_id}: {', '.join(m.columns)}")
    return 0


def _cmd_exec(args: argparse.Namespace) -> int:
    p = load_pipeline(args.pipeline)
    doc = _read_json(args.plan)
    if "precise" not in doc:
        raise UsageError(
            "plan has no capture schedule (made with --no-intermediates); "
            "nothing to record"
        )
    plan = plan_from_doc(doc["precise"])
    run_p, schedule = rewrite_for_materialization(p, plan)
    ctx = load_context(run_p)
    ctx.materialize = {op_id: list(cols) for op_id, cols in schedule.items()}
    # the output step is captured in full so a later query can check the
    # asked-for row for membership
    ctx.materialize[run_p.output] = None
    execute(run_p, ctx)
    d = _capture_dir(args.plan, args.capture_dir)
    os.makedirs(d, exist_ok=True)
    for op_id in sorted(ctx.captured):
        write_csv(os.path.join(d, f"{op_id}.csv"), ctx.captured[op_id])
    print(f"captured {len(ctx.captured)} tables to {d}")
    return 0


def _load_captures(p: Pipeline, plan: LineagePlan, d: str, ctx: ExecutionContext) -> None:
    out_id = plan.decisions[0].op_id
    schemas = {
        m.op_id: p.schema_of(m.op_id).project(list(m.columns))
        for m in plan.materializations
    }
    schemas[out_id] = p.schema_of(out_id)  # written in full by exec
    for op_id, schema in schemas.items():
        path = os.path.join(d, f"{op_id}.csv")
        if not os.path.exists(path):
            raise UsageError(f"missing capture {path}; run exec first")
        ctx.captured[op_id] = load_csv(path, schema)


def _cmd_query(args: argparse.Namespace) -> int:
    doc = _read_json(args.plan)
    ppath = doc.get("meta", {}).get("pipeline")
    if not ppath:
        raise UsageError("plan file has no pipeline reference; re-run infer")
    if not os.path.exists(ppath):
        raise UsageError(f"pipeline moved since infer: {ppath}")
    p = load_pipeline(ppath)
    t_o = _parse_row(args.row, p.schema_of(p.output))
    ctx = load_context(p)
    if args.iterative:
        if "iterative" not in doc:
            raise UsageError(
                "plan has no refinement passes; re-run infer --no-intermediates"
            )
        res = query_iterative(p, phases_from_doc(doc["iterative"]), t_o, ctx)
    else:
        if "precise" not in doc:
            raise UsageError("plan has no capture schedule; query with --iterative")
        plan = plan_from_doc(doc["precise"])
        _load_captures(p, plan, _capture_dir(args.plan, args.capture_dir), ctx)
        res = query(plan, t_o, ctx)
    print(render(res))
    return 0


def _cmd_verify(args: argparse.Namespace) -> int:
    p = load_pipeline(args.pipeline)
    first = pushdown_superset(p)
    for rec in first.records:
        op = p.ops[rec.op_id]
        in_schemas = [p.schema_of(i) for i in op.inputs]
        res = push_down(rec.pred, op, in_schemas, _sub_source_schema(p, op), REQUIRE_EXACT)
        print(f"{rec.op_id} {op.kind}: {res.classification}")
        for e in res.edges:
            line = f"  edge {e.target}: {e.kind}"
            proof = e.proof
            if proof is not None and proof.verdict is Verdict.NOT_EQUIVALENT and proof.witness:
                pairs = " ".join(
                    f"{k}={render_cell(v)}" for k, v in sorted(proof.witness.items())
                )
                line += f" witness {pairs}"
            print(line)
    return 0


def _cmd_oracle(args: argparse.Namespace) -> int:
    p = load_pipeline(args.pipeline)
    ctx = load_context(p)
    t_o = _parse_row(args.row, p.schema_of(p.output))
    got = oracle_pipeline_lineage(p, ctx, t_o)
    for name in sorted(got):
        table = ctx.tables[name]
        for pos in positions_of(table, got[name]):
            cells = ",".join(render_cell(v) for v in table.rows[pos])
            print(f"table={name} pos={pos} {cells}")
    return 0


def _fpr(got: set[int], want: set[int]) -> float:
    if not got:
        return 0.0
    return len(got - want) / len(got)


def _cmd_compare(args: argparse.Namespace) -> int:
    p = load_pipeline(args.pipeline)
    ctx = load_context(p)
    t_o = _parse_row(args.row, p.schema_of(p.output))
    want = {
        name: set(positions_of(ctx.tables[name], values))
        for name, values in oracle_pipeline_lineage(p, ctx, t_o).items()
    }
    params = {f"row.{c}": v for c, v in zip(p.schema_of(p.output).names, t_o)}

    first = pushdown_superset(p)
    naive: dict[str, set[int]] = {}
    for name, table in ctx.tables.items():
        src = first.sources.get(name)
        naive[name] = {
            pos
            for pos, r in enumerate(table.rows)
            if src is not None
            and eval_expr(src.pred, row_env(table.schema, r), params) is True
        }

    plan = infer(p)
    plan = optimize_intermediates(p, plan, load_context(p))
    run_p, schedule = rewrite_for_materialization(p, plan)
    pctx = load_context(run_p)
    pctx.materialize = {op_id: list(cols) for op_id, cols in schedule.items()}
    pctx.materialize[run_p.output] = None
    execute(run_p, pctx)
    precise = {
        name: set(res)
        for name, res in _positions_by_table(query(plan, t_o, pctx)).items()
    }

    res_i = query_iterative(p, plan_phases(p), t_o, load_context(p))
    iterative = {name: set(res) for name, res in _positions_by_table(res_i).items()}

    for name in sorted(ctx.tables):
        print(
            f"table={name}"
            f" naive={_fpr(naive.get(name, set()), want.get(name, set())):.3f}"
            f" precise={_fpr(precise.get(name, set()), want.get(name, set())):.3f}"
            f" iterative={_fpr(iterative.get(name, set()), want.get(name, set())):.3f}"
        )
    return 0


def _positions_by_table(res) -> dict[str, list[int]]:
    return {name: res.positions(name) for name in res.rows}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rowtrace", description="row-level lineage for table pipelines"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    pi = sub.add_parser("infer", help="plan lineage and write the plan file")
    pi.add_argument("pipeline")
    pi.add_argument("--no-intermediates", action="store_true")
    pi.add_argument("--out", default=None)
    pi.set_defaults(fn=_cmd_infer)

    pe = sub.add_parser("exec", help="run the pipeline, capturing what the plan needs")
    pe.add_argument("pipeline")
    pe.add_argument("--plan", required=True)
    pe.add_argument("--capture-dir", default=None)
    pe.set_defaults(fn=_cmd_exec)

    pq = sub.add_parser("query", help="lineage of one output row")
    pq.add_argument("plan")
    pq.add_argument("--row", required=True)
    pq.add_argument("--iterative", action="store_true")
    pq.add_argument("--capture-dir", default=None)
    pq.set_defaults(fn=_cmd_query)

    pv = sub.add_parser("verify", help="per-operator pushdown report with witnesses")
    pv.add_argument("pipeline")
    pv.set_defaults(fn=_cmd_verify)

    po = sub.add_parser("oracle", help="brute-force lineage on tiny inputs")
    po.add_argument("pipeline")
    po.add_argument("--row", required=True)
    po.set_defaults(fn=_cmd_oracle)

    pc = sub.add_parser("compare", help="false-positive rates against the oracle")
    pc.add_argument("pipeline")
    pc.add_argument("--row", required=True)
    pc.set_defaults(fn=_cmd_compare)

    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    try:
        return args.fn(args)
    except (UsageError, EngineError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # pragma: no cover - defensive
        print(f"internal error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())

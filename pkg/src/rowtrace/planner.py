"""Whole-pipeline lineage planning.

Walks the operator graph backwards from the output, pushing a fully
parameterized row predicate through each operator. Operators that admit
an exact rewrite hand the predicate on to their inputs; an operator
that does not gets its output marked for capture, and the walk restarts
from a parameterized pin over the captured columns. The result is a
plan: per-source selection predicates plus the captures a query needs
in order to instantiate their parameters.

Two refinements then shrink the captures. Projection keeps only the
columns the rest of the plan can name: whatever downstream operators
read, whatever the capture's own selection mentions, and every join or
correlation key on the way back to the sources. Deferral re-walks the
graph with one capture moved toward the output and keeps the move when
the measured capture is strictly smaller, stopping at the first
candidate that cannot stand in exactly for the rows it replaces.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import PlanError
from .executor import ExecutionContext, execute
from .exprs import (
    FALSE,
    Cmp,
    Col,
    Expr,
    Param,
    conj,
    cols_of,
    disj,
    params_of,
    parse_expr,
    print_expr,
)
from .pipeline import GROUP_SOURCE, Operator, Pipeline
from .pushdown import (
    EXACT,
    FAILED,
    key_columns,
    push_down,
    push_down_row_selection,
)

# counts planner walks in this process; tests pin plan reuse on it
INFER_CALLS = 0

# parameter names the planner hands out; pipelines must not use them
_RESERVED = re.compile(r"^(row|mat\d+)\.")


@dataclass(frozen=True)
class OpDecision:
    """What the walk did at one operator: ``action`` is ``exact`` when
    the arriving predicate pushed through, ``materialize`` when the
    operator's output had to be captured instead. ``exact`` tracks
    whether the whole chain from the output down to here stayed exact."""

    op_id: str
    pred: Expr
    action: str
    exact: bool


@dataclass(frozen=True)
class MatPoint:
    """One capture: which operator's output, which columns survive, and
    how a query works with the captured rows. ``selection`` picks the
    rows that matter for one output row; ``pins`` re-parameterize each
    picked row so the upstream predicates can be instantiated from it."""

    op_id: str
    columns: tuple[str, ...]
    selection: Expr
    selection_exact: bool
    pins: tuple[tuple[str, str], ...]
    pushdown: str


@dataclass(frozen=True)
class SourcePredicate:
    table: str
    pred: Expr
    exact: bool


@dataclass(frozen=True)
class LineagePlan:
    decisions: tuple[OpDecision, ...]
    materializations: tuple[MatPoint, ...]
    sources: dict[str, SourcePredicate]
    # parameter name -> (origin, column); origin is "output" or a capture op id
    params: dict[str, tuple[str, str]]

    @property
    def precise(self) -> bool:
        return all(s.exact for s in self.sources.values())

    def capture_columns(self) -> dict[str, tuple[str, ...]]:
        return {m.op_id: m.columns for m in self.materializations}


# ---------------------------------------------------------------------------
# the backwards walk
# ---------------------------------------------------------------------------


@dataclass
class _WalkState:
    decisions: list[OpDecision]
    mats: list[MatPoint]
    raw_sources: dict[str, list[tuple[Expr, bool]]]
    params: dict[str, tuple[str, str]]


def _pin_predicate(prefix: str, cols) -> tuple[Expr, tuple[tuple[str, str], ...]]:
    pins = tuple((f"{prefix}.{c}", c) for c in cols)
    pred = conj([Cmp("==", Col(c), Param(n)) for n, c in pins])
    return pred, pins


def _merge(entries: list[tuple[Expr, bool]]) -> tuple[Expr, bool]:
    if len(entries) == 1:
        return entries[0]
    preds = list(dict.fromkeys(e for e, _ in entries))
    if len(preds) == 1:
        return preds[0], all(x for _, x in entries)
    # several consumers ask for different rows; the union covers them
    # all, but minimality across shared paths is nothing we can certify
    return disj(preds), False


def _sub_source_schema(p: Pipeline, op: Operator):
    sub = op.sub()
    if sub is not None and sub.source != GROUP_SOURCE:
        return p.schema_of(sub.source)
    return None


def _distribute(p: Pipeline, st: _WalkState, pending, edges, exact: bool) -> None:
    for e in edges:
        flag = exact and e.kind == EXACT
        if e.target in p.ops:
            pending.setdefault(e.target, []).append((e.pred, flag))
        else:
            st.raw_sources.setdefault(e.target, []).append((e.pred, flag))


def _walk(p: Pipeline, mat_at: dict[str, tuple[str, ...]]) -> _WalkState:
    """One pass over the graph. ``mat_at`` forces a capture (with the
    given columns) at the listed operators; everywhere else a capture
    happens only when the exact pushdown fails."""
    st = _WalkState([], [], {}, {})
    pending: dict[str, list[tuple[Expr, bool]]] = {}
    seed, pins = _pin_predicate("row", p.output_schema().names)
    st.params.update({n: ("output", c) for n, c in pins})
    pending[p.output] = [(seed, True)]

    for op in reversed(p.op_order()):
        entries = pending.pop(op.id, None)
        if entries is None:
            continue  # no path to the output, nothing to trace
        F, exact = _merge(entries)
        in_schemas = [p.schema_of(r) for r in op.inputs]
        sub_schema = _sub_source_schema(p, op)

        cols = mat_at.get(op.id)
        if cols is None:
            res = push_down(F, op, in_schemas, sub_schema)
            if res.classification == EXACT:
                st.decisions.append(OpDecision(op.id, F, "exact", exact))
                _distribute(p, st, pending, res.edges, exact)
                continue
            cols = p.schema_of(op.id).names  # capture the full row
        elif not set(cols_of(F)) <= set(cols):
            raise PlanError(f"{op.id}: capture projection drops columns its selection needs")

        pred, mpins = _pin_predicate(f"mat{len(st.mats)}", cols)
        res = push_down_row_selection(pred, op, in_schemas, sub_schema)
        if res.classification == FAILED:
            raise PlanError(f"{op.id}: no sound pushdown for a captured row")
        st.decisions.append(OpDecision(op.id, F, "materialize", exact))
        st.mats.append(MatPoint(op.id, tuple(cols), F, exact, mpins, res.classification))
        st.params.update({n: (op.id, c) for n, c in mpins})
        _distribute(p, st, pending, res.edges, exact and res.classification == EXACT)
    return st


def _assemble(p: Pipeline, st: _WalkState) -> LineagePlan:
    sources = {}
    for name in p.tables:
        entries = st.raw_sources.get(name)
        if not entries:
            # the table never contributes to the output
            sources[name] = SourcePredicate(name, FALSE, True)
            continue
        pred, exact = _merge(entries)
        sources[name] = SourcePredicate(name, pred, exact)
    return LineagePlan(tuple(st.decisions), tuple(st.mats), sources, dict(st.params))


def _op_exprs(ops):
    for op in ops:
        if "predicate" in op.params:
            yield op.params["predicate"]
        for _, e in op.params.get("columns", ()):
            yield e
        for a in op.params.get("aggs", ()):
            if a.expr is not None:
                yield a.expr
        sub = op.sub()
        if sub is not None:
            yield from _op_exprs(sub.ops)


def _check_reserved_params(p: Pipeline) -> None:
    for e in _op_exprs(p.ops.values()):
        for name in params_of(e):
            if _RESERVED.match(name):
                raise PlanError(f"pipeline parameter ${name} collides with plan parameter naming")


def infer(p: Pipeline) -> LineagePlan:
    """Plan lineage recovery, capturing wherever exactness demands it."""
    global INFER_CALLS
    INFER_CALLS += 1
    _check_reserved_params(p)
    return _assemble(p, _walk(p, {}))


# ---------------------------------------------------------------------------
# capture refinement
# ---------------------------------------------------------------------------


def referenced_input_columns(op: Operator) -> set[str]:
    """Input columns the operator itself reads. Sub-pipelines over their
    own source table see that table, not the outer input, so only the
    correlated columns count for them."""
    k = op.kind
    cols: set[str] = set()
    if k in ("Filter", "InnerJoin", "LeftOuterJoin"):
        cols |= cols_of(op.params["predicate"])
    elif k in ("RowTransform", "RowExpand"):
        for _, e in op.params["columns"]:
            cols |= cols_of(e)
    elif k == "DropColumn":
        cols |= set(op.params["keep"])
    elif k in ("Reorder", "TopK"):
        cols |= {c for c, _ in op.params["keys"]}
    elif k == "GroupBy":
        cols |= set(op.params["group"])
        for a in op.params["aggs"]:
            if a.expr is not None:
                cols |= cols_of(a.expr)
    elif k == "Pivot":
        cols |= {op.params["index"], op.params["key"], op.params["value"]}
    elif k == "UnPivot":
        cols |= set(op.params["index"]) | set(op.params["melt"])
    elif k == "WindowOp":
        cols.add(op.params["index"])
        for a in op.params["aggs"]:
            if a.expr is not None:
                cols |= cols_of(a.expr)
    elif k == "GroupedMap":
        cols |= set(op.params["group"])
        for s in op.sub().ops:
            cols |= referenced_input_columns(s)
    cols |= set(op.correlate().values())
    return cols


def _consumers(p: Pipeline, ref: str) -> list[Operator]:
    out = []
    for op in p.ops.values():
        sub = op.sub()
        if ref in op.inputs or (sub is not None and sub.source == ref):
            out.append(op)
    return out


def _descendants(p: Pipeline, op_id: str) -> list[Operator]:
    rank = {op.id: i for i, op in enumerate(p.op_order())}
    seen: set[str] = set()
    frontier = [op_id]
    while frontier:
        ref = frontier.pop()
        for c in _consumers(p, ref):
            if c.id not in seen:
                seen.add(c.id)
                frontier.append(c.id)
    return sorted((p.ops[i] for i in seen), key=lambda o: rank[o.id])


def _upstream(p: Pipeline, op_id: str) -> list[Operator]:
    seen = {op_id}
    frontier = [op_id]
    while frontier:
        op = p.ops[frontier.pop()]
        refs = list(op.inputs)
        sub = op.sub()
        if sub is not None and sub.source != GROUP_SOURCE:
            refs.append(sub.source)
        for r in refs:
            if r in p.ops and r not in seen:
                seen.add(r)
                frontier.append(r)
    return [p.ops[i] for i in seen]


def _projected_columns(p: Pipeline, m: MatPoint) -> tuple[str, ...]:
    """Columns a capture at ``m.op_id`` has to keep. Beyond what the plan
    names directly, every join or correlation key between the capture and
    the sources stays, because dropping one would strand the predicates
    crossing that operator. The cut is only adopted when the pinned-row
    pushdown stays as strong as it was over the full row."""
    op = p.ops[m.op_id]
    names = p.schema_of(m.op_id).names
    keep = set(cols_of(m.selection))
    for d in _descendants(p, m.op_id):
        keep |= referenced_input_columns(d)
    for u in _upstream(p, m.op_id):
        keep |= set(key_columns(u, [p.schema_of(r) for r in u.inputs]))
    tight = tuple(c for c in names if c in keep)
    if len(tight) == len(names):
        return tuple(names)

    in_schemas = [p.schema_of(r) for r in op.inputs]
    sub_schema = _sub_source_schema(p, op)
    full_pred, full_pins = _pin_predicate("probe", names)
    res_full = push_down_row_selection(full_pred, op, in_schemas, sub_schema)
    tight_pred, _ = _pin_predicate("probe", tight)
    res_tight = push_down_row_selection(tight_pred, op, in_schemas, sub_schema)
    if res_tight.classification == EXACT and res_full.classification == EXACT:
        return tight
    if res_full.classification == SUPERSET:
        # keep whichever pins the weakened pushdown still relies on
        used: set[str] = set()
        for e in res_full.edges:
            used |= params_of(e.pred)
        survivors = {c for n, c in full_pins if n in used}
        return tuple(c for c in names if c in keep | survivors)
    return tuple(names)


def _trial(p: Pipeline, choice: dict[str, tuple[str, ...]], moved_id: str,
           expected: dict[str, str]) -> _WalkState | None:
    """Re-walk with a moved capture; None when the move changes where
    captures land or weakens any of them."""
    try:
        w = _walk(p, choice)
    except PlanError:
        return None
    if sorted(x.op_id for x in w.mats) != sorted(choice):
        return None
    for x in w.mats:
        if x.op_id == moved_id:
            if x.pushdown != EXACT:
                return None
        elif expected.get(x.op_id) != x.pushdown:
            return None
    return w


def optimize_intermediates(p: Pipeline, plan: LineagePlan, ctx: ExecutionContext) -> LineagePlan:
    """Shrink the plan's captures: project each to the columns the plan
    can still name, then scan downstream for a smaller stand-in. Sizes
    are exact row-by-column counts from one run over ``ctx.tables``."""
    if not plan.materializations:
        return plan

    choice = {m.op_id: _projected_columns(p, m) for m in plan.materializations}
    baseline = _walk(p, choice)
    if [m.op_id for m in baseline.mats] != [m.op_id for m in plan.materializations]:
        # a projection starved some upstream pushdown; keep full rows
        choice = {m.op_id: tuple(p.schema_of(m.op_id).names) for m in plan.materializations}
        baseline = _walk(p, choice)

    run = ExecutionContext(tables=dict(ctx.tables), keep_all=True)
    execute(p, run)

    for mid in [m.op_id for m in baseline.mats]:
        best_id = mid
        best_cols = choice[mid]
        best_size = len(run.outputs[mid].rows) * len(best_cols)
        expected = {x.op_id: x.pushdown for x in baseline.mats if x.op_id != mid}
        for cand in _descendants(p, mid):
            if cand.id in choice:
                break  # would fold two captures into one
            trial_choice = {k: v for k, v in choice.items() if k != mid}
            trial_choice[cand.id] = tuple(p.schema_of(cand.id).names)
            w1 = _trial(p, trial_choice, cand.id, expected)
            if w1 is None:
                break
            cm = next(x for x in w1.mats if x.op_id == cand.id)
            cols = _projected_columns(p, cm)
            if len(cols) < len(trial_choice[cand.id]):
                trial_choice[cand.id] = cols
                if _trial(p, trial_choice, cand.id, expected) is None:
                    cols = tuple(p.schema_of(cand.id).names)
            size = len(run.outputs[cand.id].rows) * len(cols)
            if size < best_size:
                best_id, best_cols, best_size = cand.id, cols, size
        if best_id != mid:
            del choice[mid]
            choice[best_id] = best_cols
            baseline = _walk(p, choice)

    return _assemble(p, baseline)


def rewrite_for_materialization(p: Pipeline, plan: LineagePlan) -> tuple[Pipeline, dict[str, tuple[str, ...]]]:
    """Capture schedule for running ``p`` so a later query can bind the
    plan. The pipeline itself runs unchanged; captures are side copies."""
    return p, plan.capture_columns()


# ---------------------------------------------------------------------------
# plan documents
# ---------------------------------------------------------------------------


def plan_to_doc(plan: LineagePlan) -> dict:
    return {
        "precise": plan.precise,
        "decisions": [
            {"op": d.op_id, "action": d.action, "exact": d.exact, "pred": print_expr(d.pred)}
            for d in plan.decisions
        ],
        "materializations": [
            {
                "op": m.op_id,
                "columns": list(m.columns),
                "selection": print_expr(m.selection),
                "selection_exact": m.selection_exact,
                "pins": [[n, c] for n, c in m.pins],
                "pushdown": m.pushdown,
            }
            for m in plan.materializations
        ],
        "sources": {
            t: {"pred": print_expr(s.pred), "exact": s.exact}
            for t, s in plan.sources.items()
        },
        "params": {n: [origin, col] for n, (origin, col) in plan.params.items()},
    }


def plan_from_doc(doc: dict) -> LineagePlan:
    decisions = tuple(
        OpDecision(d["op"], parse_expr(d["pred"]), d["action"], d["exact"])
        for d in doc["decisions"]
    )
    mats = tuple(
        MatPoint(
            m["op"],
            tuple(m["columns"]),
            parse_expr(m["selection"]),
            m["selection_exact"],
            tuple((n, c) for n, c in m["pins"]),
            m["pushdown"],
        )
        for m in doc["materializations"]
    )
    sources = {
        t: SourcePredicate(t, parse_expr(s["pred"]), s["exact"])
        for t, s in doc["sources"].items()
    }
    params = {n: (origin, col) for n, (origin, col) in doc["params"].items()}
    return LineagePlan(decisions, mats, sources, params)

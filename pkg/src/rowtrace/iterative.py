"""Capture-free lineage recovery.

When intermediates may not be stored, a single backward pass can only
promise per-source supersets: some operators refuse an exact rewrite
without a captured row to anchor on. This module tightens those
supersets by changing direction. A forward pass derives membership
predicates every surviving row is known to satisfy, phrased against
named value sets (one per source column). A second backward pass then
carries the memberships down the other edges, so each source predicate
may now mention the candidate sets of its sibling sources. Finally a
concrete fixpoint loop evaluates the refined predicates per source,
rebuilds the value sets from whatever survived, and repeats until the
candidate sets stop moving.

Everything here stays a superset of the true lineage: memberships are
only introduced along routes that provably preserve the value, and the
loop only ever removes rows the refined predicates reject.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

from .errors import IterationCapWarning, OutputRowNotFoundError
from .executor import ExecutionContext, execute
from .exprs import (
    FALSE,
    TRUE,
    Col,
    Expr,
    SetMember,
    conj,
    conjuncts,
    eval_expr,
    parse_expr,
    print_expr,
)
from .lineage import PRECISE, SUPERSET, LineageResult
from .pipeline import Operator, Pipeline
from .planner import (
    SourcePredicate,
    _check_reserved_params,
    _merge,
    _pin_predicate,
    _sub_source_schema,
)
from .pushdown import (
    ALLOW_SUPERSET,
    EXACT,
    FAILED,
    REQUIRE_EXACT,
    EdgePush,
    _edge_targets,
    _join_equalities,
    push_down,
)
from .symbolic import (
    PushupVerdict,
    correlation_equalities,
    passthrough_columns,
    verify_pushup,
)
from .tables import row_env

ITERATION_CAP = 64


@dataclass(frozen=True)
class OpRecord:
    """One operator's share of the first pass."""

    op_id: str
    pred: Expr
    classification: str
    edges: tuple[EdgePush, ...]


@dataclass(frozen=True)
class SupersetPass:
    """First pass: the capture-free backward walk. ``sources`` holds the
    per-table selections; ``exact`` says the walk never had to weaken."""

    records: tuple[OpRecord, ...]
    sources: dict[str, SourcePredicate]
    params: dict[str, tuple[str, str]]
    exact: bool


@dataclass(frozen=True)
class PushupPass:
    """Second pass: what is known to hold on every ref's rows, keyed by
    table name or operator id."""

    preds: dict[str, Expr]
    flags: tuple[str, ...]


@dataclass(frozen=True)
class DownPass:
    """Third pass: refined per-source selections, now mentioning the
    candidate value sets of other sources."""

    sources: dict[str, Expr]
    flags: tuple[str, ...]


@dataclass(frozen=True)
class RefinementPlan:
    phase1: SupersetPass
    up: PushupPass
    down: DownPass

    @property
    def flags(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(self.up.flags + self.down.flags))


@dataclass
class RefinementState:
    """Trace of the fixpoint loop, index 0 being the initial candidates."""

    value_sets: list[dict[str, frozenset]] = field(default_factory=list)
    row_sets: list[dict[str, frozenset[int]]] = field(default_factory=list)
    iterations: int = 0
    capped: bool = False


def _dedup(parts: list[Expr]) -> list[Expr]:
    return [c for c in dict.fromkeys(parts) if c != TRUE]


# ---------------------------------------------------------------------------
# phase 1: backward, weakening where exactness would need a capture
# ---------------------------------------------------------------------------


def pushdown_superset(p: Pipeline) -> SupersetPass:
    _check_reserved_params(p)
    records: list[OpRecord] = []
    raw: dict[str, list[tuple[Expr, bool]]] = {}
    pending: dict[str, list[tuple[Expr, bool]]] = {}
    seed, pins = _pin_predicate("row", p.output_schema().names)
    params = {n: ("output", c) for n, c in pins}
    pending[p.output] = [(seed, True)]

    for op in reversed(p.op_order()):
        entries = pending.pop(op.id, None)
        if entries is None:
            continue
        F, exact = _merge(entries)
        in_schemas = [p.schema_of(r) for r in op.inputs]
        res = push_down(F, op, in_schemas, _sub_source_schema(p, op), mode=ALLOW_SUPERSET)
        records.append(OpRecord(op.id, F, res.classification, res.edges))
        flag = exact and res.classification == EXACT
        for e in res.edges:
            bucket = pending if e.target in p.ops else raw
            bucket.setdefault(e.target, []).append((e.pred, flag))

    sources: dict[str, SourcePredicate] = {}
    for name in p.tables:
        entries = raw.get(name)
        if not entries:
            sources[name] = SourcePredicate(name, FALSE, True)
        else:
            pred, ex = _merge(entries)
            sources[name] = SourcePredicate(name, pred, ex)
    exact = all(s.exact for s in sources.values())
    return SupersetPass(tuple(records), sources, params, exact)


# ---------------------------------------------------------------------------
# phase 2: forward, deriving memberships the rows must satisfy
# ---------------------------------------------------------------------------


def membership_base(p: Pipeline) -> dict[str, Expr]:
    """Every source row trivially satisfies cell-wise membership in its
    own table's candidate sets. The set names double as the variables the
    fixpoint loop later assigns."""
    return {
        name: conj([SetMember(Col(c), f"v.{name}.{c}") for c in decl.schema.names])
        for name, decl in p.tables.items()
    }


def _carried(op: Operator, in_schemas, in_preds: list[Expr], sub_pred: Expr) -> Expr:
    """The candidate an operator is expected to support: memberships moved
    along pass-through columns (intersecting over ambiguous origins) plus
    memberships a semi-join's correlation equality pulls across."""
    parts: list[Expr] = []
    origins = passthrough_columns(op, in_schemas)
    for col in sorted(origins):
        shared: set[str] | None = None
        for edge, in_col in origins[col]:
            here = {
                c.setvar
                for c in conjuncts(in_preds[edge])
                if isinstance(c, SetMember) and isinstance(c.item, Col) and c.item.name == in_col
            }
            shared = here if shared is None else shared & here
        parts.extend(SetMember(Col(col), sv) for sv in sorted(shared or ()))
    if op.kind == "SemiJoin":
        pairs = correlation_equalities(op)
        for m in conjuncts(sub_pred):
            if isinstance(m, SetMember) and isinstance(m.item, Col):
                for ic, oc in pairs:
                    if m.item.name == ic:
                        parts.append(SetMember(Col(oc), m.setvar))
    return conj(_dedup(parts))


def _verified(op, in_schemas, in_preds, cand: Expr, sub_schema, sub_pred) -> bool:
    for backend in ("structural-implication", "enumeration"):
        out = verify_pushup(op, in_schemas, in_preds, cand, sub_schema, sub_pred, backend=backend)
        if out.verdict is PushupVerdict.HOLDS:
            return True
        if out.verdict is PushupVerdict.FAILS:
            return False
    return False


def pushup(p: Pipeline, phase1: SupersetPass) -> PushupPass:
    preds = membership_base(p)
    flags: list[str] = []
    for op in p.op_order():
        in_schemas = [p.schema_of(r) for r in op.inputs]
        in_preds = [preds.get(r, TRUE) for r in op.inputs]
        sub_schema = _sub_source_schema(p, op)
        sub_pred = preds.get(op.sub().source, TRUE) if sub_schema is not None else TRUE

        cand = _carried(op, in_schemas, in_preds, sub_pred)
        pool = [cand]
        cs = conjuncts(cand)
        if len(cs) > 1:
            pool += [conj([c for j, c in enumerate(cs) if j != i]) for i in range(len(cs))]
        chosen = TRUE
        for c in pool[: 1 + len(cs)]:
            if c != TRUE and _verified(op, in_schemas, in_preds, c, sub_schema, sub_pred):
                chosen = c
                break
        if chosen == TRUE and (sub_pred != TRUE or any(g != TRUE for g in in_preds)):
            # knowledge arrived but none of it survives this operator
            flags.append(f"pushup:{op.id}")
        preds[op.id] = chosen
    return PushupPass(preds, tuple(flags))


# ---------------------------------------------------------------------------
# phase 3: backward again, over selection plus memberships
# ---------------------------------------------------------------------------


def _member_transport(op: Operator, in_schemas, members: list[SetMember]) -> list[list[Expr]]:
    """Route membership conjuncts down every edge that preserves the
    value: pass-through origins, join equalities (either side), and a
    correlated equality into a semi-join or scalar sub chain. A
    membership with no route on an edge is dropped there."""
    targets = _edge_targets(op)
    n_in = len(op.inputs)
    per_edge: list[list[Expr]] = [[] for _ in targets]
    origins = passthrough_columns(op, in_schemas)
    eqs: list[tuple[str, str]] = []
    if op.kind in ("InnerJoin", "LeftOuterJoin"):
        eqs = _join_equalities(op.params["predicate"], in_schemas[0], in_schemas[1])
    pairs = correlation_equalities(op) if op.kind in ("SemiJoin", "SubQuery") else ()

    for m in members:
        col = m.item.name
        for edge, in_col in origins.get(col, ()):
            per_edge[edge].append(SetMember(Col(in_col), m.setvar))
        for lc, rc in eqs:
            # a contributing row on the far side joined some row whose
            # equated column carried this very value
            if col == lc and n_in > 1:
                per_edge[1].append(SetMember(Col(rc), m.setvar))
            elif col == rc:
                per_edge[0].append(SetMember(Col(lc), m.setvar))
        if len(per_edge) > n_in:
            for ic, oc in pairs:
                if col == oc:
                    per_edge[n_in].append(SetMember(Col(ic), m.setvar))
    return per_edge


def pushdown_again(p: Pipeline, phase1: SupersetPass, up: PushupPass) -> DownPass:
    f1 = {r.op_id: r for r in phase1.records}
    flags: list[str] = []
    pending: dict[str, list[Expr]] = {}
    raw: dict[str, list[Expr]] = {}
    seed, _ = _pin_predicate("row", p.output_schema().names)
    pending[p.output] = [seed]

    for op in reversed(p.op_order()):
        entries = pending.pop(op.id, None)
        if entries is None or op.id not in f1:
            continue
        combined = _dedup(
            [c for e in entries for c in conjuncts(e)]
            + conjuncts(f1[op.id].pred)
            + conjuncts(up.preds.get(op.id, TRUE))
        )
        members = [c for c in combined if isinstance(c, SetMember)]
        rest = [c for c in combined if not isinstance(c, SetMember)]

        in_schemas = [p.schema_of(r) for r in op.inputs]
        res = push_down(conj(rest), op, in_schemas, _sub_source_schema(p, op), mode=REQUIRE_EXACT)
        if res.classification == FAILED:
            # fall back to the first pass for the row-value part; the
            # conjuncts it cannot express are dropped, not approximated
            base_edges = f1[op.id].edges
            flags.append(f"pushdown:{op.id}")
        else:
            base_edges = res.edges
        carried = _member_transport(op, in_schemas, members)

        for e, extra in zip(base_edges, carried):
            pred = conj(_dedup(conjuncts(e.pred) + extra))
            if pred == TRUE:
                flags.append(f"pushdown:{op.id}:{e.target}")
            bucket = pending if e.target in p.ops else raw
            bucket.setdefault(e.target, []).append(pred)

    sources: dict[str, Expr] = {}
    for name in p.tables:
        entries = raw.get(name, [])
        if not entries:
            sources[name] = FALSE
        else:
            # several scans of one table constrain the same candidate
            # set, so their demands combine conjunctively
            sources[name] = conj(_dedup([c for e in entries for c in conjuncts(e)]))
    return DownPass(sources, tuple(flags))


def plan_phases(p: Pipeline) -> RefinementPlan:
    phase1 = pushdown_superset(p)
    up = pushup(p, phase1)
    return RefinementPlan(phase1, up, pushdown_again(p, phase1, up))


# ---------------------------------------------------------------------------
# phase 4: concrete fixpoint over the candidate sets
# ---------------------------------------------------------------------------


def _value_sets(p: Pipeline, ctx: ExecutionContext, rows: dict[str, frozenset[int]]) -> dict[str, frozenset]:
    out: dict[str, frozenset] = {}
    for name in p.tables:
        tab = ctx.tables[name]
        for ci, col in enumerate(tab.schema.names):
            vals = {tab.rows[i][ci] for i in rows[name]}
            out[f"v.{name}.{col}"] = frozenset(v for v in vals if v is not None)
    return out


def refine(p: Pipeline, phases: RefinementPlan, t_o, ctx: ExecutionContext) -> tuple[LineageResult, RefinementState]:
    """Shrink the candidate rows to a fixpoint and package the answer.

    Candidates start from the first-pass selections; each round re-runs
    the refined selections with the value sets rebuilt from the current
    candidates, so a row excluded anywhere stops vouching for rows
    elsewhere on the next round."""
    t0 = time.perf_counter()
    out = execute(p, ExecutionContext(dict(ctx.tables)))
    if tuple(t_o) not in set(out.rows):
        raise OutputRowNotFoundError(f"{tuple(t_o)!r} is not an output row")
    params = {f"row.{c}": v for c, v in zip(p.output_schema().names, t_o)}

    state = RefinementState()
    cur: dict[str, frozenset[int]] = {}
    for name in p.tables:
        tab = ctx.tables[name]
        g = phases.phase1.sources[name].pred
        cur[name] = frozenset(
            i for i, r in enumerate(tab.rows) if eval_expr(g, row_env(tab.schema, r), params) is True
        )
    sets = _value_sets(p, ctx, cur)
    state.row_sets.append(cur)
    state.value_sets.append(sets)

    while state.iterations < ITERATION_CAP:
        nxt: dict[str, frozenset[int]] = {}
        for name in p.tables:
            tab = ctx.tables[name]
            g = phases.down.sources[name]
            nxt[name] = frozenset(
                i
                for i in sorted(cur[name])
                if eval_expr(g, row_env(tab.schema, tab.rows[i]), params, sets) is True
            )
        state.iterations += 1
        sets = _value_sets(p, ctx, nxt)
        state.row_sets.append(nxt)
        state.value_sets.append(sets)
        if nxt == cur:
            break
        cur = nxt
    else:
        state.capped = True
        warnings.warn("candidate sets still moving at the iteration cap", IterationCapWarning)

    final = state.row_sets[-1]
    rows = {
        name: [(i, ctx.tables[name].rows[i]) for i in sorted(final[name])] for name in sorted(p.tables)
    }
    flags = phases.flags + (("iteration-cap",) if state.capped else ())
    mode = PRECISE if phases.phase1.exact and not flags else SUPERSET
    res = LineageResult(mode, rows, flags, elapsed_ms=(time.perf_counter() - t0) * 1000)
    return res, state


# ---------------------------------------------------------------------------
# plan file round trip
# ---------------------------------------------------------------------------


def phases_to_doc(phases: RefinementPlan) -> dict:
    return {
        "sources": {
            t: {"pred": print_expr(s.pred), "exact": s.exact}
            for t, s in sorted(phases.phase1.sources.items())
        },
        "refined": {t: print_expr(e) for t, e in sorted(phases.down.sources.items())},
        "flags": list(phases.flags),
        "exact": phases.phase1.exact,
    }


def phases_from_doc(doc: dict) -> RefinementPlan:
    sources = {
        t: SourcePredicate(t, parse_expr(d["pred"]), bool(d["exact"]))
        for t, d in doc["sources"].items()
    }
    phase1 = SupersetPass((), sources, {}, bool(doc["exact"]))
    down = DownPass({t: parse_expr(s) for t, s in doc["refined"].items()}, tuple(doc["flags"]))
    return RefinementPlan(phase1, PushupPass({}, ()), down)

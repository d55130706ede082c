"""Pushing predicates through single operators.

Given a predicate F over an operator's output, find per-input predicates
G selecting the input rows that contribute to F-selected outputs. The
search tries the strongest candidates first and weakens them one
conjunct at a time; a candidate counts as exact only when the bounded
verifier proves it equivalent to the reference row-level predicate of
the operator. When nothing verifies, the caller either materializes the
operator's output or, in superset mode, takes a weakening that provably
loses no contributing rows.

The reference transports every conjunct of F through the operator's
column mapping and closes it under join equalities and correlations.
Columns that tie edges together (join keys, correlated columns) but are
not pinned by F keep a fresh parameter no candidate can express, which
is exactly what forces materialization when F reaches an operator with
the key projected away.

Aggregate outputs follow one rule: an aggregate is a function of its
group columns (or correlated columns), so an equality pin on it adds
nothing once those columns are pinned, and cannot be pushed at all when
they are not. The one refinement is min/max, where the pin transfers to
the rows attaining the extreme value.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ValidationError
from .exprs import (
    FALSE,
    TRUE,
    Arith,
    Cmp,
    Col,
    Expr,
    Fn,
    If,
    Lit,
    Param,
    conj,
    conjuncts,
    cols_of,
    disj,
    params_of,
    subst_cols,
    subst_params,
)
from .pipeline import GROUP_SOURCE, SUPERSET_ONLY, Agg, Operator, SubPipe, infer_schema
from .symbolic import Verdict, VerifyOutcome, passthrough_columns, verify_equivalent
from .tables import Schema

EXACT = "exact"
SUPERSET = "superset"
FAILED = "failed"

REQUIRE_EXACT = "require-exact"
ALLOW_SUPERSET = "allow-superset"

# parameters of this form stand for values the candidate would need but
# F does not pin; they make the reference honestly unreachable
_FRESH = "edge:"


@dataclass(frozen=True)
class EdgePush:
    """Pushed predicate for one input edge. ``target`` is the operator or
    table the edge reads; an operator with a table-sourced sub-pipeline
    carries that source as an extra trailing edge."""

    target: str
    pred: Expr
    kind: str
    proof: VerifyOutcome | None = None


@dataclass(frozen=True)
class PushdownResult:
    op_id: str
    edges: tuple[EdgePush, ...]

    @property
    def classification(self) -> str:
        kinds = {e.kind for e in self.edges}
        if FAILED in kinds:
            return FAILED
        if SUPERSET in kinds:
            return SUPERSET
        return EXACT


# ---------------------------------------------------------------------------
# predicate shape helpers
# ---------------------------------------------------------------------------


def pinned_columns(F: Expr) -> dict[str, Expr]:
    """Output cells F fixes: top-level conjuncts ``col == param-or-literal``."""
    pins: dict[str, Expr] = {}
    for c in conjuncts(F):
        if isinstance(c, Cmp) and c.op == "==":
            if isinstance(c.left, Col) and isinstance(c.right, (Param, Lit)):
                pins.setdefault(c.left.name, c.right)
            elif isinstance(c.right, Col) and isinstance(c.left, (Param, Lit)):
                pins.setdefault(c.right.name, c.left)
    return pins


def null_pinned_columns(F: Expr) -> set[str]:
    """Columns F fixes to Null via ``(isnull col)`` conjuncts."""
    out = set()
    for c in conjuncts(F):
        if isinstance(c, Fn) and c.name == "isnull" and isinstance(c.args[0], Col):
            out.add(c.args[0].name)
    return out


def _fixed(col: str, pins: dict[str, Expr], nulls: set[str]) -> bool:
    return col in pins or col in nulls


def _pin_or_null(col: str, pins: dict[str, Expr], nulls: set[str]) -> Expr | None:
    if col in pins:
        return pins[col]
    if col in nulls:
        return Lit(None)
    return None


def _join_equalities(pred: Expr, left: Schema, right: Schema) -> list[tuple[str, str]]:
    pairs = []
    for c in conjuncts(pred):
        if isinstance(c, Cmp) and c.op == "==" and isinstance(c.left, Col) and isinstance(c.right, Col):
            a, b = c.left.name, c.right.name
            if left.has(a) and right.has(b):
                pairs.append((a, b))
            elif left.has(b) and right.has(a):
                pairs.append((b, a))
    return pairs


def _side_of(conjunct: Expr, left: Schema, right: Schema) -> int | None:
    cols = cols_of(conjunct)
    if cols and all(left.has(c) for c in cols):
        return 0
    if cols and all(right.has(c) for c in cols):
        return 1
    return None


def _fresh(col: str) -> Param:
    return Param(_FRESH + col)


def _has_fresh(exprs: tuple[Expr, ...]) -> bool:
    return any(p.startswith(_FRESH) for e in exprs for p in params_of(e))


# ---------------------------------------------------------------------------
# output-column origins and conjunct transport
# ---------------------------------------------------------------------------


def _origins(op: Operator, in_schemas: list[Schema]) -> list[dict[str, Expr]]:
    """Per input edge: output column -> expression over that edge's
    columns. A conjunct of F transports onto an edge when the origin map
    covers every column it mentions."""
    kind = op.kind
    if kind in ("Filter", "Reorder", "TopK"):
        return [{c: Col(c) for c in in_schemas[0].names}]
    if kind in ("InnerJoin", "LeftOuterJoin"):
        return [
            {c: Col(c) for c in in_schemas[0].names},
            {c: Col(c) for c in in_schemas[1].names},
        ]
    if kind in ("Union", "Intersect"):
        identity = {c: Col(c) for c in in_schemas[0].names}
        return [identity, dict(identity)]
    if kind == "DropColumn":
        return [{c: Col(c) for c in op.params["keep"]}]
    if kind == "RowTransform":
        return [{name: expr for name, expr in op.params["columns"]}]
    if kind in ("GroupBy", "GroupedMap"):
        return [{c: Col(c) for c in op.params["group"]}]
    if kind == "Pivot":
        index = op.params["index"]
        return [{index: Col(index)}]
    if kind == "UnPivot":
        return [{c: Col(c) for c in op.params["index"]}]
    if kind == "RowExpand":
        return [{}]
    if kind == "WindowOp":
        return [{c: Col(c) for c in in_schemas[0].names}]
    if kind in ("SemiJoin", "AntiJoin", "SubQuery"):
        return [{c: Col(c) for c in in_schemas[0].names}]
    raise ValidationError(f"unknown operator kind {kind!r}")


def _transport(F: Expr, origins: list[dict[str, Expr]]) -> tuple[list[list[Expr]], list[Expr]]:
    """Place each conjunct of F on every edge whose origin map covers it;
    conjuncts no edge covers come back as leftovers."""
    per_edge: list[list[Expr]] = [[] for _ in origins]
    leftover: list[Expr] = []
    for c in conjuncts(F):
        cols = cols_of(c)
        placed = False
        for edge, origin in enumerate(origins):
            if all(col in origin for col in cols):
                per_edge[edge].append(subst_cols(c, {col: origin[col] for col in cols}))
                placed = True
        if not placed:
            leftover.append(c)
    return per_edge, leftover


# ---------------------------------------------------------------------------
# sub-pipeline selection chains
# ---------------------------------------------------------------------------


def _sub_chain(sub: SubPipe, positional_ok: bool) -> Expr | None:
    """The selection a sub-pipeline applies to its source, as one
    predicate over the source columns. Filters fold until the first
    aggregation; later filters constrain aggregated rows and cannot be
    read back. TopK reorders survival positionally, which only matters
    when the caller reads a positional result."""
    chain = _sub_op_chain(sub)
    if chain is None:
        return None
    parts: list[Expr] = []
    aggregated = False
    for sop in chain:
        if sop.kind == "Filter":
            if aggregated:
                return None
            parts.append(sop.params["predicate"])
        elif sop.kind in ("Reorder", "DropColumn"):
            continue
        elif sop.kind == "TopK":
            if not positional_ok:
                return None
        elif sop.kind == "GroupBy":
            aggregated = True
        else:
            return None
    return conj(parts)


def _scalar_sub(sub: SubPipe) -> bool:
    chain = _sub_op_chain(sub)
    if not chain:
        return False
    last = chain[-1]
    return last.kind == "GroupBy" and not last.params["group"]


def _correlate_pins(op: Operator, pins: dict[str, Expr], nulls: set[str]) -> dict[str, Expr] | None:
    """Correlation parameter -> the value F pins its outer column to.
    None when some correlated column is unpinned: the sub-pipeline's
    behaviour then depends on a value no pushed predicate can name."""
    out: dict[str, Expr] = {}
    for pname, outer_col in op.correlate().items():
        pin = _pin_or_null(outer_col, pins, nulls)
        if pin is None:
            return None
        out[pname] = pin
    return out


def _sub_reference(op: Operator, pins: dict[str, Expr], nulls: set[str]) -> Expr | None:
    """Reference predicate over the sub-pipeline's source rows; fresh
    parameters stand in for unpinned correlated columns."""
    sub = op.sub()
    chain = _sub_chain(sub, positional_ok=op.kind != "SubQuery")
    if chain is None:
        return None
    mapping: dict[str, Expr] = {}
    for pname, outer_col in op.correlate().items():
        pin = _pin_or_null(outer_col, pins, nulls)
        mapping[pname] = pin if pin is not None else _fresh(outer_col)
    return subst_params(chain, mapping)


def _sub_candidate(op: Operator, pins: dict[str, Expr], nulls: set[str]) -> Expr:
    """Pushable predicate for the sub-pipeline source: the chain's
    conjuncts, keeping each one only when its correlation parameters are
    pinned by F."""
    sub = op.sub()
    chain = _sub_chain(sub, positional_ok=op.kind != "SubQuery")
    if chain is None:
        return TRUE
    corr = op.correlate()
    kept: list[Expr] = []
    mapping: dict[str, Expr] = {}
    for c in conjuncts(chain):
        usable = True
        for pname in params_of(c):
            if pname not in corr:
                continue  # an externally bound parameter, kept as-is
            pin = _pin_or_null(corr[pname], pins, nulls)
            if pin is None:
                usable = False
            else:
                mapping[pname] = pin
        if usable:
            kept.append(c)
    return subst_params(conj(kept), mapping)


# ---------------------------------------------------------------------------
# reference construction
# ---------------------------------------------------------------------------


def _reference_for(
    F: Expr,
    op: Operator,
    in_schemas: list[Schema],
) -> tuple[Expr, ...] | None:
    """Row-level reference per edge, or None when the operator kind
    admits no exact selection under this F."""
    kind = op.kind
    if kind in SUPERSET_ONLY:
        return None
    pins = pinned_columns(F)
    nulls = null_pinned_columns(F)
    origins = _origins(op, in_schemas)
    per_edge, leftover = _transport(F, origins)

    if kind == "Filter":
        return (conj(per_edge[0] + [op.params["predicate"]]),)

    if kind == "Reorder":
        return (conj(per_edge[0]),)

    if kind in ("DropColumn", "RowTransform"):
        if leftover:
            return None  # F mentions a column with no input expression
        return (conj(per_edge[0]),)

    if kind == "TopK":
        # which rows survive depends on the whole table unless F selects
        # one full row value
        if not all(_fixed(c, pins, nulls) for c in in_schemas[0].names):
            return None
        return (conj(per_edge[0]),)

    if kind == "Union":
        return (conj(per_edge[0]), conj(per_edge[1]))

    if kind == "Intersect":
        # membership in the other branch is decided by the full row value
        if not all(_fixed(c, pins, nulls) for c in in_schemas[0].names):
            return None
        return (conj(per_edge[0]), conj(per_edge[1]))

    if kind in ("InnerJoin", "LeftOuterJoin"):
        return _join_reference(F, op, in_schemas, per_edge, leftover, pins, nulls)

    if kind == "GroupBy":
        return _group_by_reference(op, per_edge, leftover, pins, nulls)

    if kind == "Pivot":
        return _pivot_reference(op, per_edge, leftover, pins, nulls)

    if kind == "GroupedMap":
        return _grouped_map_reference(op, in_schemas, per_edge, leftover, pins, nulls)

    if kind in ("SemiJoin", "AntiJoin", "SubQuery"):
        return _sub_op_reference(op, in_schemas, per_edge, leftover, pins, nulls)

    raise ValidationError(f"unknown operator kind {kind!r}")


def _join_reference(
    F: Expr,
    op: Operator,
    in_schemas: list[Schema],
    per_edge: list[list[Expr]],
    leftover: list[Expr],
    pins: dict[str, Expr],
    nulls: set[str],
) -> tuple[Expr, ...] | None:
    if leftover:
        return None  # a conjunct of F straddles both sides
    left, right = in_schemas
    own = op.params["predicate"]
    eqs = _join_equalities(own, left, right)

    guard: Expr | None = None
    if op.kind == "LeftOuterJoin":
        right_pins = [c for c in right.names if c in pins]
        right_nulls = [c for c in right.names if c in nulls]
        if not right_pins:
            null_forms = all(
                isinstance(c, Fn) and c.name == "isnull" and isinstance(c.args[0], Col)
                for c in per_edge[1]
            )
            if right_nulls and null_forms:
                # every right-side constraint is a null pin: the output
                # row is a padded miss whose right-side lineage is empty
                return (conj(per_edge[0]), FALSE)
            return None  # matched or padded, F cannot tell them apart
        if not right_nulls:
            # A parameter pin on the right settles matched vs padded
            # only once it is bound, so the reference dispatches on the
            # pin value: a null binding marks a padded miss (inputs hold
            # no nulls), collapsing the right edge and releasing every
            # constraint the join predicate would put on the outer row.
            if not all(_fixed(lc, pins, nulls) for lc, _ in eqs):
                return None  # a padded miss leaves the outer key open
            pinned_keys = [rc for _, rc in eqs if rc in pins]
            probe = pins[pinned_keys[0] if pinned_keys else right_pins[0]]
            guard = Fn("isnull", (probe,))
        # a null pin beside a value pin on the right: the row matched
        # and the matched row carried the null itself

    parts = [list(p) for p in per_edge]
    # a pin on one side of a join equality fixes the other side too;
    # unpinned equalities keep a shared fresh parameter on both sides
    for lc, rc in eqs:
        pin = _pin_or_null(lc, pins, nulls) or _pin_or_null(rc, pins, nulls)
        if pin is None:
            pin = _fresh(lc)
            parts[0].append(Cmp("==", Col(lc), pin))
            parts[1].append(Cmp("==", Col(rc), pin))
            continue
        if not _fixed(lc, pins, nulls):
            parts[0].append(Cmp("==", Col(lc), pin))
        if not _fixed(rc, pins, nulls):
            parts[1].append(Cmp("==", Col(rc), pin))

    eq_cols = {c for pair in eqs for c in pair}
    for c in conjuncts(own):
        side = _side_of(c, left, right)
        if side is not None:
            if side == 0 and guard is not None:
                # for padded misses the join predicate failed, so its
                # left-side conjuncts must not constrain the outer row
                parts[side].append(If(guard, TRUE, c))
            else:
                parts[side].append(c)
            continue
        if isinstance(c, Cmp) and c.op == "==" and isinstance(c.left, Col) and isinstance(c.right, Col):
            continue  # the equality pairs above already cover it
        # a cross-side range comparison ties unpinned columns together
        # in a way no per-edge predicate expresses
        for col in cols_of(c):
            if not _fixed(col, pins, nulls) and col not in eq_cols:
                side_idx = 0 if left.has(col) else 1
                parts[side_idx].append(Cmp("==", Col(col), _fresh(col)))
    if guard is not None:
        return (conj(parts[0]), If(guard, FALSE, conj(parts[1])))
    return tuple(conj(p) for p in parts)


def _group_by_reference(
    op: Operator,
    per_edge: list[list[Expr]],
    leftover: list[Expr],
    pins: dict[str, Expr],
    nulls: set[str],
) -> tuple[Expr, ...] | None:
    aggs: tuple[Agg, ...] = op.params["aggs"]
    group = list(op.params["group"])
    agg_names = {a.out for a in aggs}
    if leftover and not all(_fixed(g, pins, nulls) for g in group):
        # aggregates are functions of the group columns; a constraint on
        # one filters whole groups, which no row predicate expresses
        # until the group is fixed
        return None
    for c in leftover:
        cols = cols_of(c)
        if len(cols) != 1 or not cols <= agg_names:
            return None
        if _pin_or_null(next(iter(cols)), pins, nulls) is None:
            return None  # a range over an aggregate, not a pin
    parts = list(per_edge[0])
    if not aggs or any(a.func == "count" for a in aggs):
        # a count forces the producing subset to be the whole group, so
        # every other aggregate pin is implied and drops away; a pure
        # group-by keeps whole groups too
        return (conj(parts),)
    if any(a.func in ("sum", "avg") for a in aggs):
        # distinct subsets can share a sum or a mean, so the minimal-set
        # union is not a row selection over this table
        return None
    # all aggregates are min or max: the lineage is the rows attaining
    # any of them, which needs every aggregate held to a known value
    arms = []
    for a in aggs:
        if a.out in pins:
            arms.append(Cmp("==", a.expr, pins[a.out]))
        elif a.out in nulls:
            arms.append(Fn("isnull", (a.expr,)))
        else:
            return None
    parts.append(disj(arms))
    return (conj(parts),)


def _pivot_reference(
    op: Operator,
    per_edge: list[list[Expr]],
    leftover: list[Expr],
    pins: dict[str, Expr],
    nulls: set[str],
) -> tuple[Expr, ...] | None:
    index = op.params["index"]
    if not _fixed(index, pins, nulls):
        return None
    cell_names = {name for name, _v in op.params["keys"]}
    for c in leftover:
        cols = cols_of(c)
        if len(cols) != 1 or not cols <= cell_names:
            return None
        if _pin_or_null(next(iter(cols)), pins, nulls) is None:
            return None
    key_col, value_col, func = op.params["key"], op.params["value"], op.params["func"]
    branches = []
    for out_name, key_value in op.params["keys"]:
        if out_name in nulls:
            continue  # a Null cell means no rows of this key contribute
        arm: list[Expr] = [Cmp("==", Col(key_col), Lit(key_value))]
        if func in ("min", "max") and out_name in pins:
            arm.append(Cmp("==", Col(value_col), pins[out_name]))
        branches.append(conj(arm))
    return (conj(per_edge[0] + [disj(branches)]),)


def _grouped_map_reference(
    op: Operator,
    in_schemas: list[Schema],
    per_edge: list[list[Expr]],
    leftover: list[Expr],
    pins: dict[str, Expr],
    nulls: set[str],
) -> tuple[Expr, ...] | None:
    group = set(op.params["group"])
    for c in leftover:
        if cols_of(c) & group:
            return None  # mixes group and sub-produced columns
    fixes = {g: _pin_or_null(g, pins, nulls) for g in group if _fixed(g, pins, nulls)}
    inner = _push_through_sub(conj(leftover), op.params["sub"], in_schemas[0], fixes, nulls)
    if inner is None:
        return None
    return (conj(per_edge[0] + [inner]),)


def _sub_op_chain(sub: SubPipe) -> list[Operator] | None:
    """The operators on the source-to-output path, in that order; None
    when the sub-pipeline is not a single-input chain."""
    by_id = {sop.id: sop for sop in sub.ops}
    chain: list[Operator] = []
    ref = sub.output
    while ref != sub.source:
        sop = by_id.get(ref)
        if sop is None or len(sop.inputs) != 1 or len(chain) > len(sub.ops):
            return None
        chain.append(sop)
        ref = sop.inputs[0]
    chain.reverse()
    return chain


def _push_through_sub(
    F: Expr,
    sub: SubPipe,
    source_schema: Schema,
    group_fixes: dict[str, Expr],
    group_nulls: set[str],
) -> Expr | None:
    """Push a predicate over the sub-pipeline's output back to its source
    rows, one operator at a time; None as soon as a step is not exact.

    Within one group every row carries the group values, so a stage
    column that provably copies a group column can be pinned to the
    outer pin for free. That is what lets a TopK deep in the chain pass
    its full-pin gate after the group columns were projected away.
    """
    chain = _sub_op_chain(sub)
    if chain is None:
        return None
    schemas: list[Schema] = [source_schema]
    carrying: list[dict[str, str]] = [{c: c for c in source_schema.names if c in group_fixes}]
    for sop in chain:
        schemas.append(infer_schema(sop, [schemas[-1]]))
        moved = {}
        for out_col, origins in passthrough_columns(sop, [schemas[-2]]).items():
            srcs = {carrying[-1][c] for _e, c in origins if c in carrying[-1]}
            if len(srcs) == len(origins) == 1:
                moved[out_col] = srcs.pop()
        carrying.append(moved)

    def inject(pred: Expr, stage: int) -> Expr:
        extra: list[Expr] = []
        for c, g in carrying[stage].items():
            if g in group_nulls:
                extra.append(Fn("isnull", (Col(c),)))
            else:
                extra.append(Cmp("==", Col(c), group_fixes[g]))
        return conj(conjuncts(pred) + extra)

    pred = F
    for i in range(len(chain) - 1, -1, -1):
        result = push_down(inject(pred, i + 1), chain[i], [schemas[i]], None, mode=REQUIRE_EXACT)
        if result.classification != EXACT:
            return None
        pred = result.edges[0].pred
    return pred


def _sub_op_reference(
    op: Operator,
    in_schemas: list[Schema],
    per_edge: list[list[Expr]],
    leftover: list[Expr],
    pins: dict[str, Expr],
    nulls: set[str],
) -> tuple[Expr, ...] | None:
    if op.kind == "SubQuery":
        scalar = op.params["as"]
        for c in leftover:
            cols = cols_of(c)
            if cols != {scalar} or _pin_or_null(scalar, pins, nulls) is None:
                return None
        if not _scalar_sub(op.sub()):
            return None  # positional scalar; a rerun is order-dependent
        if op.correlate() and _correlate_pins(op, pins, nulls) is None:
            # the scalar is a function of the correlated columns; its pin
            # filters outer rows by a value no predicate can name
            if leftover:
                return None
    elif leftover:
        return None
    if op.kind == "AntiJoin":
        if op.correlate() and _correlate_pins(op, pins, nulls) is None:
            # an unpinned correlation lets the transported predicate pick
            # up matched outer rows that never reached the output
            return None
        # value-identical outer rows share the verdict, and the verdict
        # for these is "no match": their inner lineage is empty
        return (conj(per_edge[0]), FALSE)
    sub_ref = _sub_reference(op, pins, nulls)
    if sub_ref is None:
        return None
    return (conj(per_edge[0]), sub_ref)


# ---------------------------------------------------------------------------
# candidate generation
# ---------------------------------------------------------------------------


def _candidate_base(F: Expr, op: Operator, in_schemas: list[Schema]) -> list[list[Expr]]:
    """The strongest pushable rewriting of F: transported conjuncts, the
    operator's own one-sided predicate parts, pins carried across join
    equalities, and the aggregate pin rewritings."""
    kind = op.kind
    origins = _origins(op, in_schemas)
    pins = pinned_columns(F)
    nulls = null_pinned_columns(F)
    per_edge, leftover = _transport(F, origins)

    if kind == "Filter":
        per_edge[0].extend(conjuncts(op.params["predicate"]))
    elif kind in ("InnerJoin", "LeftOuterJoin"):
        own = op.params["predicate"]
        left, right = in_schemas
        for lc, rc in _join_equalities(own, left, right):
            lpin, rpin = _pin_or_null(lc, pins, nulls), _pin_or_null(rc, pins, nulls)
            if lpin is not None and not _fixed(rc, pins, nulls):
                per_edge[1].append(Cmp("==", Col(rc), lpin))
            if rpin is not None and not _fixed(lc, pins, nulls):
                per_edge[0].append(Cmp("==", Col(lc), rpin))
        for c in conjuncts(own):
            side = _side_of(c, left, right)
            if side is not None:
                per_edge[side].append(c)
    elif kind == "WindowOp":
        idx = op.params["index"]
        pin = pins.get(idx)
        if pin is not None:
            size = op.params["size"]
            per_edge[0] = [
                Cmp(">=", Col(idx), pin),
                Cmp("<=", Col(idx), Arith("+", pin, Lit(size))),
            ]
    elif kind == "RowExpand":
        arms = _row_expand_arms(F, op)
        if arms is not None:
            per_edge[0] = [arms]
    elif kind in ("SemiJoin", "AntiJoin", "SubQuery"):
        if kind == "AntiJoin":
            per_edge.append([FALSE])
        else:
            per_edge.append(conjuncts(_sub_candidate(op, pins, nulls)))

    return [_dedupe(parts) for parts in per_edge]


def _row_expand_arms(F: Expr, op: Operator) -> Expr | None:
    """One disjunct per tuple position: the source row matches if some
    position reproduces every pinned output cell."""
    pins = pinned_columns(F)
    cols = dict(op.params["columns"])
    if not pins or not all(c in cols for c in pins):
        return None
    width = len(next(iter(cols.values())).items)
    arms = []
    for j in range(width):
        arms.append(conj([Cmp("==", cols[c].items[j], pin) for c, pin in pins.items()]))
    return disj(arms)


def _dedupe(parts: list[Expr]) -> list[Expr]:
    seen: list[Expr] = []
    for x in parts:
        if x == FALSE:
            if x not in seen:
                seen.append(x)
            continue
        for c in conjuncts(x):
            if c not in seen:
                seen.append(c)
    return seen


def _candidates(
    F: Expr,
    op: Operator,
    in_schemas: list[Schema],
    reference: tuple[Expr, ...] | None,
) -> list[tuple[Expr, ...]]:
    """Most selective first: the reference itself when pushable, the full
    rewrite, each one-conjunct weakening of it, then everything-true."""
    base = _candidate_base(F, op, in_schemas)
    n_edges = len(base)
    cands: list[tuple[Expr, ...]] = []
    if reference is not None and not _has_fresh(reference):
        cands.append(_pad(reference, n_edges))
    cands.append(tuple(conj(parts) for parts in base))
    for edge in range(n_edges):
        for i in range(len(base[edge])):
            weakened = [list(parts) for parts in base]
            del weakened[edge][i]
            cands.append(tuple(conj(parts) for parts in weakened))
    cands.append(tuple(TRUE for _ in range(n_edges)))
    out: list[tuple[Expr, ...]] = []
    for c in cands:
        if c not in out:
            out.append(c)
    return out


# ---------------------------------------------------------------------------
# superset weakenings
# ---------------------------------------------------------------------------


def _superset_edges(F: Expr, op: Operator, in_schemas: list[Schema]) -> tuple[Expr, ...]:
    """The strongest weakening that provably loses no contributing rows.
    Transported conjuncts are sound for monotone kinds: a dropped input
    row only produces outputs failing the very conjunct that dropped it.
    Grouping kinds keep whole groups, positional kinds keep the window
    or everything, and outer-join right sides stay whole because
    shrinking them invents padded rows F never bounded."""
    kind = op.kind
    base = _candidate_base(F, op, in_schemas)

    if kind == "TopK":
        return (TRUE,)
    if kind == "WindowOp":
        idx = op.params["index"]
        return (conj([c for c in base[0] if cols_of(c) <= {idx}]),)
    if kind in ("GroupBy", "GroupedMap"):
        group = set(op.params["group"])
        return (conj([c for c in base[0] if cols_of(c) <= group]),)
    if kind == "Pivot":
        index = op.params["index"]
        return (conj([c for c in base[0] if cols_of(c) <= {index}]),)
    if kind == "LeftOuterJoin":
        return (conj(base[0]), TRUE)
    if kind == "AntiJoin":
        # the chain with pinned correlations removes only inner rows that
        # could never match an F-selected outer row
        pins = pinned_columns(F)
        nulls = null_pinned_columns(F)
        return (conj(base[0]), _sub_candidate(op, pins, nulls))
    if kind in ("SemiJoin", "SubQuery"):
        inner = conj(base[1]) if len(base) > 1 else TRUE
        return (conj(base[0]), inner)
    # monotone kinds: Filter, InnerJoin, RowTransform, DropColumn,
    # Reorder, Union, Intersect, UnPivot, RowExpand
    return tuple(conj(parts) for parts in base)


# ---------------------------------------------------------------------------
# entry points
# ---------------------------------------------------------------------------


def _edge_targets(op: Operator) -> list[str]:
    targets = list(op.inputs)
    sub = op.sub()
    if sub is not None and sub.source != GROUP_SOURCE:
        targets.append(sub.source)
    return targets


def _edge_schemas(op: Operator, in_schemas: list[Schema], sub_schema: Schema | None) -> list[Schema]:
    schemas = list(in_schemas)
    sub = op.sub()
    if sub is not None and sub.source != GROUP_SOURCE:
        if sub_schema is None:
            raise ValidationError(f"{op.id}: sub-pipeline source schema required")
        schemas.append(sub_schema)
    return schemas


def _pad(cand: tuple[Expr, ...], n: int) -> tuple[Expr, ...]:
    if len(cand) >= n:
        return cand[:n]
    return cand + tuple(TRUE for _ in range(n - len(cand)))


def push_down(
    F: Expr,
    op: Operator,
    in_schemas: list[Schema],
    sub_schema: Schema | None = None,
    mode: str = REQUIRE_EXACT,
) -> PushdownResult:
    """Push F through one operator.

    Candidates are tried most selective first; the first one the verifier
    proves equivalent to the row-level reference wins and every edge is
    Exact. Otherwise require-exact mode reports the operator as Failed
    (keeping the per-edge verdicts of the strongest candidate), and
    allow-superset mode falls back to a lossless weakening.
    """
    targets = _edge_targets(op)
    schemas = _edge_schemas(op, in_schemas, sub_schema)
    reference = _reference_for(F, op, in_schemas)
    cands = _candidates(F, op, in_schemas, reference)

    first_verdicts: list[VerifyOutcome | None] | None = None
    if reference is not None:
        ref = _pad(reference, len(targets))
        for cand in cands:
            cand = _pad(cand, len(targets))
            if cand == ref:
                proof = VerifyOutcome(Verdict.EQUIVALENT, backend="syntactic")
                edges = tuple(EdgePush(t, c, EXACT, proof) for t, c in zip(targets, cand))
                return PushdownResult(op.id, edges)
            proof = verify_equivalent(op, schemas, list(cand), list(ref))
            if proof.verdict is Verdict.EQUIVALENT:
                edges = tuple(EdgePush(t, c, EXACT, proof) for t, c in zip(targets, cand))
                return PushdownResult(op.id, edges)
            if first_verdicts is None:
                first_verdicts = _edge_verdicts(schemas, cand, ref)

    if mode == ALLOW_SUPERSET:
        sup = _pad(_superset_edges(F, op, in_schemas), len(targets))
        edges = tuple(EdgePush(t, c, SUPERSET) for t, c in zip(targets, sup))
        return PushdownResult(op.id, edges)

    best = _pad(cands[0], len(targets))
    if first_verdicts is None:
        first_verdicts = [None] * len(targets)
    edges = tuple(
        EdgePush(
            t,
            c,
            EXACT if o is not None and o.verdict is Verdict.EQUIVALENT else FAILED,
            o,
        )
        for t, c, o in zip(targets, best, first_verdicts)
    )
    return PushdownResult(op.id, edges)


def _edge_verdicts(
    schemas: list[Schema],
    cand: tuple[Expr, ...],
    ref: tuple[Expr, ...],
) -> list[VerifyOutcome | None]:
    out: list[VerifyOutcome | None] = []
    for schema, g, r in zip(schemas, cand, ref):
        if g == r:
            out.append(VerifyOutcome(Verdict.EQUIVALENT, backend="syntactic"))
            continue
        o = verify_equivalent(None, [schema], [g], [r])
        out.append(o)
    return out


def push_down_row_selection(
    F_row: Expr,
    op: Operator,
    in_schemas: list[Schema],
    sub_schema: Schema | None = None,
) -> PushdownResult:
    """Push a row-selection predicate (every output cell pinned) through
    one operator. Falls back to the kind's default row-level selection
    when the search proves nothing: exact for kinds whose default selects
    precisely the contributing rows, a superset for the kinds where no
    single input subset owns the output row."""
    result = push_down(F_row, op, in_schemas, sub_schema, mode=REQUIRE_EXACT)
    if result.classification == EXACT:
        return result

    targets = _edge_targets(op)
    reference = _reference_for(F_row, op, in_schemas)
    if reference is not None and not _has_fresh(reference):
        edges = tuple(
            EdgePush(t, e, EXACT) for t, e in zip(targets, _pad(reference, len(targets)))
        )
        return PushdownResult(op.id, edges)

    sup = _pad(_superset_edges(F_row, op, in_schemas), len(targets))
    edges = []
    for t, c, prev in zip(targets, sup, result.edges):
        proof = prev.proof if prev.kind == FAILED else None
        edges.append(EdgePush(t, c, SUPERSET, proof))
    return PushdownResult(op.id, tuple(edges))


def key_columns(op: Operator, in_schemas: list[Schema]) -> tuple[str, ...]:
    """Output columns whose pins keep this operator's pushdown exact:
    join-equality columns and correlated outer columns. A plan that
    materializes upstream must keep these in its projection."""
    kind = op.kind
    cols: list[str] = []
    if kind in ("InnerJoin", "LeftOuterJoin"):
        eqs = _join_equalities(op.params["predicate"], in_schemas[0], in_schemas[1])
        cols = [c for pair in eqs for c in pair]
    elif kind in ("SemiJoin", "AntiJoin", "SubQuery"):
        cols = sorted(op.correlate().values())
    seen: list[str] = []
    for c in cols:
        if c not in seen:
            seen.append(c)
    return tuple(seen)

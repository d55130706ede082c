"""Bounded verification of pushed predicates.

Equivalence of a pushed predicate against the reference row-level
predicate is checked per input edge and per row: both predicates are
survival conditions for one generic row, so they are equivalent exactly
when they agree on every valuation of the referenced cells and
parameters. Valuations are enumerated over a finite domain built from
the literals appearing in the formulas (plus probe points between and
around them), which is the documented verification bound of this
engine: a verdict of Equivalent is a proof over that domain, not over
unbounded integers.

Pushup candidates are checked either structurally (membership conjuncts
transported along columns the operator passes through unchanged, sound
by construction) or by enumerating small concrete tables and set-variable
assignments and executing the operator for real.
"""

from __future__ import annotations

import enum
import itertools
import os
import time
from dataclasses import dataclass, field

from .exprs import (
    TRUE,
    And,
    Arith,
    Cmp,
    Col,
    Expr,
    Fn,
    If,
    Idx,
    Lit,
    Not,
    Or,
    Param,
    SetMember,
    Tup,
    conj,
    conjuncts,
    cols_of,
    eval_expr,
    params_of,
    setvars_of,
    subst_cols,
    walk,
)
from .pipeline import Operator
from .tables import Schema, Table
from .values import Kind

DEFAULT_INTS = (0, 1, 2, 3)
DEFAULT_ATOMS = ("aa", "bb")
EVAL_BUDGET = 400_000


def solver_timeout_ms() -> int:
    raw = os.environ.get("PREDTRACE_SOLVER_TIMEOUT_MS", "")
    try:
        return int(raw) if raw else 2000
    except ValueError:
        return 2000


class Verdict(enum.Enum):
    EQUIVALENT = "equivalent"
    NOT_EQUIVALENT = "not-equivalent"
    UNKNOWN = "unknown"


class PushupVerdict(enum.Enum):
    HOLDS = "holds"
    FAILS = "fails"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class VerifyOutcome:
    verdict: Verdict
    witness: dict | None = None
    backend: str = "enumeration"
    edge: int | None = None


@dataclass(frozen=True)
class PushupOutcome:
    verdict: PushupVerdict
    witness: dict | None = None
    backend: str = "enumeration"


# ---------------------------------------------------------------------------
# symbolic tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SymbolicTable:
    """Fixed-size table of distinct symbols with one survival expression
    per row. Predicates conjoin onto the survival expressions and never
    touch the cells."""

    schema: Schema
    cells: tuple[tuple[Param, ...], ...]
    exists: tuple[Expr, ...]


def symbolic_table(schema: Schema, k: int = 2, tag: str = "r") -> SymbolicTable:
    cells = tuple(
        tuple(Param(f"{tag}{i}.{name}") for name in schema.names) for i in range(k)
    )
    return SymbolicTable(schema, cells, (TRUE,) * k)


def sym_apply(pred: Expr, st: SymbolicTable) -> SymbolicTable:
    """Conjoin a predicate onto every row's survival expression, with the
    row's cell symbols standing in for its columns."""
    new_exists = []
    for row_cells, ex in zip(st.cells, st.exists):
        mapping: dict[str, Expr] = dict(zip(st.schema.names, row_cells))
        new_exists.append(conj([ex, subst_cols(pred, mapping)]))
    return SymbolicTable(st.schema, st.cells, tuple(new_exists))


# ---------------------------------------------------------------------------
# finite domains
# ---------------------------------------------------------------------------


class _Groups:
    """Union-find over symbol names; symbols that meet in a comparison
    share a domain, and the literals they are compared against become
    that domain's anchor points."""

    def __init__(self) -> None:
        self.parent: dict[str, str] = {}
        self.literals: dict[str, set] = {}
        self.kinds: dict[str, Kind | None] = {}
        self.arith: set[str] = set()
        self.nullable: set[str] = set()

    def find(self, s: str) -> str:
        self.parent.setdefault(s, s)
        while self.parent[s] != s:
            self.parent[s] = self.parent[self.parent[s]]
            s = self.parent[s]
        return s

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        self.parent[ra] = rb
        self.literals.setdefault(rb, set()).update(self.literals.pop(ra, set()))
        if self.kinds.get(rb) is None:
            self.kinds[rb] = self.kinds.pop(ra, None)
        else:
            self.kinds.pop(ra, None)
        if ra in self.arith:
            self.arith.discard(ra)
            self.arith.add(rb)
        if ra in self.nullable:
            self.nullable.discard(ra)
            self.nullable.add(rb)

    def add_literal(self, s: str, v) -> None:
        r = self.find(s)
        self.literals.setdefault(r, set()).add(v)

    def set_kind(self, s: str, k: Kind | None) -> None:
        r = self.find(s)
        if self.kinds.get(r) is None:
            self.kinds[r] = k


def _side_symbols(e: Expr) -> tuple[list[str], list, bool]:
    """Symbols, literal values, and an arithmetic flag for one side of a
    comparison."""
    syms: list[str] = []
    lits: list = []
    has_arith = False
    for node in walk(e):
        if isinstance(node, Col):
            syms.append(node.name)
        elif isinstance(node, Param):
            syms.append("$" + node.name)
        elif isinstance(node, Lit) and node.value is not None:
            lits.append(node.value)
        elif isinstance(node, (Arith, Fn, If, Tup, Idx)):
            has_arith = True
    return syms, lits, has_arith


def _collect_groups(exprs: list[Expr], col_kinds: dict[str, Kind]) -> _Groups:
    g = _Groups()
    for name, kind in col_kinds.items():
        g.find(name)
        g.set_kind(name, kind)

    def visit(e: Expr) -> None:
        if isinstance(e, (And, Or)):
            for x in e.items:
                visit(x)
        elif isinstance(e, Not):
            visit(e.item)
        elif isinstance(e, Cmp):
            syms_l, lits_l, ar_l = _side_symbols(e.left)
            syms_r, lits_r, ar_r = _side_symbols(e.right)
            syms = syms_l + syms_r
            if not syms:
                return
            first = syms[0]
            for s in syms[1:]:
                g.union(first, s)
            for v in lits_l + lits_r:
                g.add_literal(first, v)
            if ar_l or ar_r:
                g.arith.add(g.find(first))
            if any(isinstance(x, Lit) and x.value is None for x in (e.left, e.right)):
                g.nullable.add(g.find(first))
        elif isinstance(e, SetMember):
            syms, lits, _ = _side_symbols(e.item)
            for a, b in zip(syms, syms[1:]):
                g.union(a, b)
            for s in syms:
                for v in lits:
                    g.add_literal(s, v)
        elif isinstance(e, Fn) and e.name == "isnull":
            syms, _, _ = _side_symbols(e.args[0])
            for s in syms:
                g.nullable.add(g.find(s))
        elif isinstance(e, If):
            visit(e.cond)

    for e in exprs:
        visit(e)
    return g


def _between(a: str, b: str) -> str | None:
    for probe in (a + "!", a + "m", a + "~"):
        if a < probe < b:
            return probe
    return None


def _textual_points(lits: list[str]) -> list:
    if not lits:
        return list(DEFAULT_ATOMS)
    lits = sorted(lits)
    points: list[str] = ["!"] if lits[0] > "!" else []
    for i, v in enumerate(lits):
        points.append(v)
        if i + 1 < len(lits):
            mid = _between(v, lits[i + 1])
            if mid:
                points.append(mid)
    points.append(lits[-1] + "~")
    return points


def _numeric_points(lits: list, want_float: bool, arith: bool) -> list:
    if not lits:
        base = list(DEFAULT_INTS if arith else DEFAULT_INTS[:3])
        return [float(x) for x in base] if want_float else base
    lits = sorted(set(lits))
    step = 0.5 if want_float else 1
    points = [lits[0] - step]
    for i, v in enumerate(lits):
        points.append(v)
        if i + 1 < len(lits):
            mid = (v + lits[i + 1]) / 2 if want_float else v + 1
            if v < mid < lits[i + 1]:
                points.append(mid)
    points.append(lits[-1] + step)
    return points


def _group_points(kind: Kind | None, lits: set, arith: bool, nullable: bool) -> list:
    vals = [v for v in lits if v is not None]
    if kind is Kind.BOOL:
        points: list = [False, True]
    elif kind in (Kind.STR, Kind.DATE) or (kind is None and vals and all(isinstance(v, str) for v in vals)):
        points = _textual_points([v for v in vals if isinstance(v, str)])
    else:
        want_float = kind is Kind.FLOAT or any(isinstance(v, float) for v in vals)
        nums = [v for v in vals if isinstance(v, (int, float)) and not isinstance(v, bool)]
        points = _numeric_points(nums, want_float, arith)
    if len(points) > 8:
        points = points[:8]
    if nullable:
        points.append(None)
    return points


def _domains(exprs: list[Expr], col_kinds: dict[str, Kind]) -> dict[str, list]:
    groups = _collect_groups(exprs, col_kinds)
    cols = set()
    params = set()
    for e in exprs:
        cols |= cols_of(e)
        params |= {"$" + p for p in params_of(e)}
    out: dict[str, list] = {}
    cache: dict[str, list] = {}
    for sym in sorted(cols | params):
        root = groups.find(sym)
        if root not in cache:
            cache[root] = _group_points(
                groups.kinds.get(root),
                groups.literals.get(root, set()),
                root in groups.arith,
                root in groups.nullable,
            )
        out[sym] = cache[root]
    return out


def _assignment_env(syms: list[str], values: tuple) -> tuple[dict, dict]:
    row: dict = {}
    params: dict = {}
    for s, v in zip(syms, values):
        if s.startswith("$"):
            params[s[1:]] = v
        else:
            row[s] = v
    return row, params


# ---------------------------------------------------------------------------
# equivalence of pushed predicates
# ---------------------------------------------------------------------------


class _Deadline:
    def __init__(self, ms: int) -> None:
        self.t_end = time.monotonic() + ms / 1000.0
        self.evals = 0

    def spent(self) -> bool:
        self.evals += 1
        if self.evals % 1024 == 0 and time.monotonic() > self.t_end:
            return True
        return self.evals > EVAL_BUDGET


def _equiv_edge(schema: Schema, g: Expr, g_row: Expr, link: tuple[Expr, ...], deadline: _Deadline) -> VerifyOutcome:
    exprs = [g, g_row, *link]
    col_kinds = {c: schema.kind(c) for c in (cols_of(g) | cols_of(g_row)) if schema.has(c)}
    domains = _domains(exprs, col_kinds)
    syms = sorted(domains)
    total = 1
    for s in syms:
        total *= len(domains[s])
    if total > EVAL_BUDGET:
        return VerifyOutcome(Verdict.UNKNOWN, backend="enumeration")

    free_conjuncts = [c for c in conjuncts(g_row) if not params_of(c)]
    best: dict | None = None
    best_score = -1
    for values in itertools.product(*(domains[s] for s in syms)):
        if deadline.spent():
            return VerifyOutcome(Verdict.UNKNOWN, backend="enumeration")
        row, params = _assignment_env(syms, values)
        if not all(eval_expr(c, row, params) is True for c in link):
            continue
        lhs = eval_expr(g, row, params) is True
        rhs = eval_expr(g_row, row, params) is True
        if lhs == rhs:
            continue
        # prefer witnesses that satisfy every parameter-free conjunct of
        # the reference predicate: they point at the parameterized atom
        # the candidate actually fails to express
        score = sum(1 for c in free_conjuncts if eval_expr(c, row, params) is True)
        if score > best_score:
            best_score = score
            best = {**row, **{"$" + p: v for p, v in params.items()}}
            if score == len(free_conjuncts):
                break
    if best is not None:
        return VerifyOutcome(Verdict.NOT_EQUIVALENT, witness=best, backend="enumeration")
    return VerifyOutcome(Verdict.EQUIVALENT, backend="enumeration")


def verify_equivalent(
    op: Operator | None,
    in_schemas: list[Schema],
    G: list[Expr],
    G_row: list[Expr],
    link: tuple[Expr, ...] = (),
) -> VerifyOutcome:
    """Check, edge by edge, that a candidate pushed predicate selects the
    same input rows as the reference row-level predicate under the linking
    constraints. The first differing edge yields NotEquivalent with a
    concrete valuation witness."""
    deadline = _Deadline(solver_timeout_ms())
    for edge, (schema, g, r) in enumerate(zip(in_schemas, G, G_row)):
        out = _equiv_edge(schema, g, r, link, deadline)
        if out.verdict is not Verdict.EQUIVALENT:
            return VerifyOutcome(out.verdict, out.witness, out.backend, edge)
    return VerifyOutcome(Verdict.EQUIVALENT)


# ---------------------------------------------------------------------------
# pushup verification
# ---------------------------------------------------------------------------


def passthrough_columns(op: Operator, in_schemas: list[Schema]) -> dict[str, list[tuple[int, str]]]:
    """Output columns an operator copies verbatim from input rows, as
    output column -> possible (edge, input column) origins. A row-value
    conjunct proven on every origin edge holds on the output."""
    kind = op.kind
    if kind in ("Filter", "Reorder", "TopK"):
        return {c: [(0, c)] for c in in_schemas[0].names}
    if kind in ("InnerJoin", "LeftOuterJoin"):
        out: dict[str, list[tuple[int, str]]] = {c: [(0, c)] for c in in_schemas[0].names}
        if kind == "InnerJoin":
            # left-join right columns are null-padded on misses, so a
            # membership proven on the right input does not survive
            out.update({c: [(1, c)] for c in in_schemas[1].names})
        return out
    if kind == "Union":
        return {c: [(0, c), (1, c)] for c in in_schemas[0].names}
    if kind == "Intersect":
        return {c: [(0, c)] for c in in_schemas[0].names}
    if kind == "DropColumn":
        return {c: [(0, c)] for c in op.params["keep"]}
    if kind == "RowTransform":
        out = {}
        for name, expr in op.params["columns"]:
            if isinstance(expr, Col):
                out[name] = [(0, expr.name)]
        return out
    if kind in ("GroupBy", "GroupedMap"):
        return {c: [(0, c)] for c in op.params["group"]}
    if kind == "Pivot":
        return {op.params["index"]: [(0, op.params["index"])]}
    if kind == "UnPivot":
        return {c: [(0, c)] for c in op.params["index"]}
    if kind == "WindowOp":
        return {c: [(0, c)] for c in in_schemas[0].names}
    if kind in ("SemiJoin", "AntiJoin", "SubQuery"):
        return {c: [(0, c)] for c in in_schemas[0].names}
    return {}


def correlation_equalities(op: Operator) -> tuple[tuple[str, str], ...]:
    """(sub column, outer column) pairs pinned by equality to a correlated
    parameter inside a sub chain of plain filters. Filters hand rows through
    unchanged, so any retained sub row really carries the equated outer
    value; for other chain shapes no such pairing is claimed."""
    sub = op.sub()
    if sub is None or any(s.kind != "Filter" for s in sub.ops):
        return ()
    corr = op.correlate()
    pairs: list[tuple[str, str]] = []
    for sop in sub.ops:
        for c in conjuncts(sop.params["predicate"]):
            if not (isinstance(c, Cmp) and c.op == "=="):
                continue
            lhs, rhs = c.left, c.right
            if isinstance(rhs, Col) and isinstance(lhs, Param):
                lhs, rhs = rhs, lhs
            if isinstance(lhs, Col) and isinstance(rhs, Param) and rhs.name in corr:
                pairs.append((lhs.name, corr[rhs.name]))
    return tuple(pairs)


def _correlation_memberships(op: Operator, sub_G_up: Expr) -> set[str]:
    """Memberships a semi-join guarantees on its outer columns: every kept
    outer row matched a retained inner row, and an equality between an
    inner column and a correlated outer column carries the inner column's
    memberships over to the outer side."""
    if op.kind != "SemiJoin":
        return set()
    pairs = correlation_equalities(op)
    derived: set[str] = set()
    for m in conjuncts(sub_G_up):
        if isinstance(m, SetMember) and isinstance(m.item, Col):
            for ic, oc in pairs:
                if m.item.name == ic:
                    derived.add(repr(SetMember(Col(oc), m.setvar)))
    return derived


def _structural_pushup(
    op: Operator, in_schemas: list[Schema], G_up: list[Expr], F_up: Expr, sub_G_up: Expr = TRUE
) -> PushupOutcome:
    origins = passthrough_columns(op, in_schemas)
    edge_conjuncts = [set(map(repr, conjuncts(g))) for g in G_up]
    derived = _correlation_memberships(op, sub_G_up)
    for c in conjuncts(F_up):
        if not isinstance(c, SetMember) or not isinstance(c.item, Col):
            return PushupOutcome(PushupVerdict.UNKNOWN, backend="structural-implication")
        if repr(c) in derived:
            continue
        col = c.item.name
        if col not in origins:
            return PushupOutcome(PushupVerdict.UNKNOWN, backend="structural-implication")
        for edge, in_col in origins[col]:
            moved = SetMember(Col(in_col), c.setvar)
            if repr(moved) not in edge_conjuncts[edge]:
                return PushupOutcome(PushupVerdict.UNKNOWN, backend="structural-implication")
    return PushupOutcome(PushupVerdict.HOLDS, backend="structural-implication")


def _op_literal_exprs(op: Operator) -> list[Expr]:
    out = []
    if "predicate" in op.params:
        out.append(op.params["predicate"])
    sub = op.sub()
    if sub is not None:
        for sop in sub.ops:
            out.extend(_op_literal_exprs(sop))
    return out


def verify_pushup(
    op: Operator,
    in_schemas: list[Schema],
    G_up: list[Expr],
    F_up: Expr,
    sub_schema: Schema | None = None,
    sub_G_up: Expr = TRUE,
    rows_per_table: int = 2,
    backend: str = "enumeration",
) -> PushupOutcome:
    """Check that filtering the inputs with the row-value predicates and
    then running the operator yields only rows the output predicate keeps.

    The structural backend accepts membership conjuncts transported along
    pass-through columns and answers Unknown otherwise; the enumeration
    backend executes the operator over small concrete tables with every
    set-variable assignment."""
    if backend == "structural-implication":
        return _structural_pushup(op, in_schemas, G_up, F_up, sub_G_up)

    from .errors import ExecError
    from .executor import ExecutionContext, eval_operator

    deadline = _Deadline(solver_timeout_ms())
    sub = op.sub()
    schemas = list(in_schemas) + ([sub_schema] if sub_schema is not None else [])
    preds = list(G_up) + ([sub_G_up] if sub_schema is not None else [])
    exprs = [F_up, *preds, *_op_literal_exprs(op)]
    col_kinds: dict[str, Kind] = {}
    for s in schemas:
        for c in s.names:
            col_kinds.setdefault(c, s.kind(c))
    domains = _domains(exprs, col_kinds)

    setvars = set()
    for e in exprs[: 1 + len(preds)]:
        setvars |= setvars_of(e)
    setvar_space: list[list] = []
    setvar_names = sorted(setvars)
    for sv in setvar_names:
        member_points: list = []
        for e in exprs:
            for node in walk(e):
                if isinstance(node, SetMember) and node.setvar == sv and isinstance(node.item, Col):
                    member_points = domains.get(node.item.name, [])
                    break
        pool = [v for v in member_points if v is not None][:4] or [0, 1]
        subsets = []
        for r in range(len(pool) + 1):
            subsets.extend(set(c) for c in itertools.combinations(pool, r))
        setvar_space.append(subsets)

    def cell_space(schema: Schema) -> list[list]:
        return [domains.get(c, list(DEFAULT_INTS[:3])) for c in schema.names]

    def tables_for(schema: Schema) -> list[list[tuple]]:
        spaces = cell_space(schema)
        rows = [tuple(r) for r in itertools.product(*spaces)]
        out = [[r] for r in rows]
        if rows_per_table >= 2:
            out.extend([a, b] for a, b in itertools.combinations_with_replacement(rows, 2))
        return out

    per_edge_tables = [tables_for(s) for s in schemas]
    for combo in itertools.product(*per_edge_tables):
        for set_values in itertools.product(*setvar_space):
            if deadline.spent():
                return PushupOutcome(PushupVerdict.UNKNOWN)
            sets = dict(zip(setvar_names, set_values))
            filtered = []
            for schema, rows, pred in zip(schemas, combo, preds):
                names = schema.names
                kept = [r for r in rows if eval_expr(pred, dict(zip(names, r)), None, sets) is True]
                filtered.append(Table(schema, kept))
            ctx = ExecutionContext(tables={})
            if sub_schema is not None and sub is not None:
                ctx.tables[sub.source] = filtered[-1]
            try:
                result = eval_operator(op, filtered[: len(in_schemas)], ctx)
            except ExecError:
                continue
            names = result.schema.names
            for r in result.rows:
                if eval_expr(F_up, dict(zip(names, r)), None, sets) is not True:
                    witness = {
                        "inputs": [list(t.rows) for t in filtered],
                        "sets": {k: sorted(v) for k, v in sets.items()},
                        "row": r,
                    }
                    return PushupOutcome(PushupVerdict.FAILS, witness=witness)
    return PushupOutcome(PushupVerdict.HOLDS)

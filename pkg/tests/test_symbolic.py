from __future__ import annotations

from conftest import make_pipeline, tbl

from rowtrace.exprs import TRUE, And, Cmp, Col, Param, parse_expr
from rowtrace.symbolic import (
    PushupVerdict,
    Verdict,
    verify_equivalent,
    verify_pushup,
)
from rowtrace.tables import Schema
from rowtrace.values import Kind

P = parse_expr

ORDERS = Schema((("o_orderkey", Kind.INT), ("o_orderdate", Kind.DATE), ("o_orderpriority", Kind.STR)))
LINEITEM = Schema((("l_orderkey", Kind.INT), ("l_commitdate", Kind.DATE), ("l_receiptdate", Kind.DATE)))


def test_identical_predicates_equivalent():
    out = verify_equivalent(None, [ORDERS], [P("(== o_orderkey $k)")], [P("(== o_orderkey $k)")])
    assert out.verdict is Verdict.EQUIVALENT


def test_reordered_conjunction_equivalent():
    g = P("(and (== o_orderkey $k) (< o_orderdate $d))")
    r = P("(and (< o_orderdate $d) (== o_orderkey $k))")
    out = verify_equivalent(None, [ORDERS], [g], [r])
    assert out.verdict is Verdict.EQUIVALENT


def test_dropped_conjunct_not_equivalent():
    g = P("(== o_orderkey $k)")
    r = P("(and (== o_orderkey $k) (== o_orderpriority $p))")
    out = verify_equivalent(None, [ORDERS], [g], [r])
    assert out.verdict is Verdict.NOT_EQUIVALENT
    w = out.witness
    assert w is not None and w["o_orderkey"] == w["$k"] and w["o_orderpriority"] != w["$p"]


def test_failing_edge_is_reported():
    g = [P("(== o_orderkey $k)"), TRUE]
    r = [P("(== o_orderkey $k)"), P("(== l_orderkey $k)")]
    out = verify_equivalent(None, [ORDERS, LINEITEM], g, r)
    assert out.verdict is Verdict.NOT_EQUIVALENT
    assert out.edge == 1


# fresh edge parameters are built by the engine, not the grammar, so
# user-written predicates can never collide with them
KEY_EQ = Cmp("==", Col("l_orderkey"), Param("edge:o_orderkey"))


def test_witness_satisfies_parameter_free_conjuncts():
    # the candidate that forgets only the correlation equality should be
    # refuted by a row that passes the date filter but misses the key
    g = P("(< l_commitdate l_receiptdate)")
    r = And((P("(< l_commitdate l_receiptdate)"), KEY_EQ))
    out = verify_equivalent(None, [LINEITEM], [g], [r])
    assert out.verdict is Verdict.NOT_EQUIVALENT
    w = out.witness
    assert w["l_commitdate"] < w["l_receiptdate"]
    assert w["l_orderkey"] != w["$edge:o_orderkey"]


def test_link_constraint_closes_the_gap():
    # under a link that forces the key to equal the parameter, the
    # weaker predicate becomes equivalent
    g = P("(< l_commitdate l_receiptdate)")
    r = And((P("(< l_commitdate l_receiptdate)"), KEY_EQ))
    out = verify_equivalent(None, [LINEITEM], [g], [r], link=(KEY_EQ,))
    assert out.verdict is Verdict.EQUIVALENT


def test_null_only_gap_is_found():
    # == never holds on Null, isnull does: the two differ on the Null point
    s = Schema((("a", Kind.INT),))
    out = verify_equivalent(None, [s], [P("(isnull a)")], [P("(== a null)")])
    assert out.verdict is Verdict.NOT_EQUIVALENT
    assert out.witness["a"] is None


def _filter_op():
    t = tbl([("a", "Int"), ("b", "Int")], [(1, 2)])
    p = make_pipeline(
        {"t": t},
        [{"id": "f", "kind": "Filter", "inputs": ["t"], "params": {"predicate": "(> a 0)"}}],
    )
    return p.ops["f"], t.schema


def test_pushup_holds_for_filter():
    op, schema = _filter_op()
    out = verify_pushup(op, [schema], [P("(in a @v)")], P("(in a @v)"))
    assert out.verdict is PushupVerdict.HOLDS


def test_pushup_fails_when_output_set_is_narrower():
    op, schema = _filter_op()
    out = verify_pushup(op, [schema], [TRUE], P("(in a @v)"))
    assert out.verdict is PushupVerdict.FAILS
    assert out.witness is not None and "row" in out.witness


def test_pushup_structural_backend_transports_membership():
    t = tbl([("a", "Int")], [(1,)])
    u = tbl([("c", "Int"), ("d", "Int")], [(1, 2)])
    p = make_pipeline(
        {"l": t, "r": u},
        [{"id": "j", "kind": "InnerJoin", "inputs": ["l", "r"], "params": {"predicate": "(== a c)"}}],
    )
    op = p.ops["j"]
    out = verify_pushup(
        op, [t.schema, u.schema],
        [P("(in a @v)"), P("(in c @w)")],
        P("(and (in a @v) (in c @w))"),
        backend="structural-implication",
    )
    assert out.verdict is PushupVerdict.HOLDS


def test_pushup_structural_backend_unknown_without_transport():
    op, schema = _filter_op()
    out = verify_pushup(op, [schema], [TRUE], P("(> a 0)"), backend="structural-implication")
    assert out.verdict is PushupVerdict.UNKNOWN

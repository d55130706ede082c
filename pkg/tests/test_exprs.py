from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from rowtrace.errors import PipelineSyntaxError, UnboundParameterError, ValidationError
from rowtrace.exprs import (
    FALSE,
    TRUE,
    And,
    Cmp,
    Col,
    Lit,
    Param,
    SetMember,
    check_expr,
    conj,
    conjuncts,
    cols_of,
    disj,
    eval_expr,
    params_of,
    parse_expr,
    print_expr,
    setvars_of,
    subst_cols,
    subst_params,
)
from rowtrace.values import Kind


def test_parse_print_round_trip():
    texts = [
        "(and (== a 1) (< b 2.5))",
        "(or (not flag) (>= d \"1993-08-01\"))",
        "(+ a (* b 3))",
        "(== name \"O'Brien \\\"x\\\"\")",
        "(if (> a 0) a (- 0 a))",
        "(in a @vals)",
        "(== a $p)",
        "(index t 1)",
        "(concat a \"-\")",
        "(isnull a)",
        "true",
        "(== a null)",
    ]
    for t in texts:
        e = parse_expr(t)
        assert parse_expr(print_expr(e)) == e


def test_parse_rejects_malformed():
    for bad in ["(", "(==)", "(== a)", "(bogus a b)", "(index t x)", "a b", ""]:
        with pytest.raises(PipelineSyntaxError):
            parse_expr(bad)


def test_eval_arithmetic():
    row = {"a": 7, "b": 2}
    assert eval_expr(parse_expr("(+ a b)"), row) == 9
    assert eval_expr(parse_expr("(/ a b)"), row) == 3  # Int division floors
    assert eval_expr(parse_expr("(% a b)"), row) == 1
    assert eval_expr(parse_expr("(/ a 2.0)"), row) == 3.5


def test_eval_null_propagates():
    row = {"a": None, "b": 2}
    assert eval_expr(parse_expr("(+ a b)"), row) is None
    assert eval_expr(parse_expr("(== a 2)"), row) is False
    assert eval_expr(parse_expr("(!= a 2)"), row) is True  # != is the complement of ==
    assert eval_expr(parse_expr("(isnull a)"), row) is True
    assert eval_expr(parse_expr("(isnull b)"), row) is False


def test_eval_set_membership():
    e = parse_expr("(in a @keep)")
    assert eval_expr(e, {"a": 2}, sets={"keep": {1, 2}}) is True
    assert eval_expr(e, {"a": 5}, sets={"keep": {1, 2}}) is False
    assert eval_expr(e, {"a": None}, sets={"keep": {1, 2}}) is False


def test_eval_unbound_param_raises():
    with pytest.raises(UnboundParameterError):
        eval_expr(parse_expr("(== a $p)"), {"a": 1})
    with pytest.raises(UnboundParameterError):
        eval_expr(parse_expr("(in a @s)"), {"a": 1})


def test_eval_param_binding():
    e = parse_expr("(== a $p)")
    assert eval_expr(e, {"a": 3}, {"p": 3}) is True
    assert eval_expr(e, {"a": 3}, {"p": 4}) is False


def test_check_expr_types():
    env = {"a": Kind.INT, "s": Kind.STR, "d": Kind.DATE, "f": Kind.BOOL}
    assert check_expr(parse_expr("(+ a 1)"), env) is Kind.INT
    assert check_expr(parse_expr("(< d \"1993-01-01\")"), env) is Kind.BOOL
    with pytest.raises(ValidationError):
        check_expr(parse_expr("(< a s)"), env)
    with pytest.raises(ValidationError):
        check_expr(parse_expr("(+ s 1)"), env)
    with pytest.raises(ValidationError):
        check_expr(parse_expr("(and a f)"), env)
    with pytest.raises(ValidationError):
        check_expr(parse_expr("(== missing 1)"), env)


def test_collectors():
    e = parse_expr("(and (== a $p) (in b @s))")
    assert cols_of(e) == {"a", "b"}
    assert params_of(e) == {"p"}
    assert setvars_of(e) == {"s"}


def test_subst_cols():
    e = parse_expr("(== a $p)")
    assert subst_cols(e, {"a": Col("x")}) == Cmp("==", Col("x"), Param("p"))
    with pytest.raises(KeyError):
        subst_cols(e, {})


def test_subst_params():
    e = parse_expr("(== a $p)")
    assert subst_params(e, {"p": 5}) == Cmp("==", Col("a"), Lit(5))


def test_conjuncts_flatten():
    e = parse_expr("(and (and (== a 1) (== b 2)) (== c 3))")
    assert len(conjuncts(e)) == 3
    assert conjuncts(TRUE) == []


def test_conj_disj_identities():
    a = parse_expr("(== a 1)")
    assert conj([]) == TRUE
    assert conj([a]) == a
    assert conj([a, TRUE]) == a
    assert conj([a, FALSE]) == FALSE
    assert disj([]) == FALSE
    assert disj([a, TRUE]) == TRUE
    assert disj([a, a]) == a


# random expression trees: parse∘print must be the identity

_atoms = st.one_of(
    st.integers(-9, 9).map(Lit),
    st.sampled_from(["a", "b", "c"]).map(Col),
    st.sampled_from(["p", "q"]).map(Param),
    st.just(Lit(True)),
    st.just(Lit("s\"x")),
)


def _trees(children):
    return st.one_of(
        st.tuples(st.sampled_from(["==", "<", "<=", ">", ">=", "!="]), children, children).map(
            lambda t: Cmp(t[0], t[1], t[2])
        ),
        st.lists(children, min_size=2, max_size=3).map(lambda xs: And(tuple(xs))),
        st.tuples(children, st.sampled_from(["s1", "s2"])).map(lambda t: SetMember(t[0], t[1])),
    )


@given(st.recursive(_atoms, _trees, max_leaves=10))
def test_print_parse_identity(e):
    assert parse_expr(print_expr(e)) == e

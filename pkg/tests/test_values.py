from __future__ import annotations

import pytest

from rowtrace.errors import CsvError
from rowtrace.values import Kind, kind_of, kinds_comparable, parse_cell, render_cell, values_compare, values_equal


def test_parse_cell_basic():
    assert parse_cell("42", Kind.INT) == 42
    assert parse_cell("-7", Kind.INT) == -7
    assert parse_cell("2.5", Kind.FLOAT) == 2.5
    assert parse_cell("hello", Kind.STR) == "hello"
    assert parse_cell("true", Kind.BOOL) is True
    assert parse_cell("0", Kind.BOOL) is False
    assert parse_cell("1993-08-01", Kind.DATE) == "1993-08-01"


def test_parse_cell_empty_is_null():
    for kind in Kind:
        assert parse_cell("", kind) is None


def test_parse_cell_rejects_garbage():
    with pytest.raises(CsvError):
        parse_cell("abc", Kind.INT)
    with pytest.raises(CsvError):
        parse_cell("1993/08/01", Kind.DATE)
    with pytest.raises(CsvError):
        parse_cell("93-8-1", Kind.DATE)
    with pytest.raises(CsvError):
        parse_cell("maybe", Kind.BOOL)


def test_render_round_trip():
    for text, kind in [("42", Kind.INT), ("2.5", Kind.FLOAT), ("x", Kind.STR), ("true", Kind.BOOL), ("1993-08-01", Kind.DATE)]:
        assert render_cell(parse_cell(text, kind)) == text
    assert render_cell(None) == ""


def test_null_never_equal():
    assert values_equal(None, None) is False
    assert values_equal(None, 3) is False
    assert values_equal(3, 3) is True


def test_null_never_ordered():
    assert values_compare(None, 3, "<") is False
    assert values_compare(None, None, "<") is False
    assert values_compare(3, None, ">=") is False


def test_date_order_is_lexicographic():
    assert values_compare("1993-08-01", "1993-08-15", "<") is True
    assert values_compare("1993-12-31", "1994-01-01", "<") is True


def test_comparability_groups():
    assert kinds_comparable(Kind.INT, Kind.FLOAT)
    assert kinds_comparable(Kind.STR, Kind.DATE)
    assert not kinds_comparable(Kind.INT, Kind.STR)
    assert not kinds_comparable(Kind.BOOL, Kind.INT)


def test_kind_of():
    assert kind_of(True) is Kind.BOOL
    assert kind_of(1) is Kind.INT
    assert kind_of(1.0) is Kind.FLOAT
    assert kind_of("1993-08-01") is Kind.STR  # a schema, not the value, makes a Date

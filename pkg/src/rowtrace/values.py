"""Cell values and their comparison semantics.

Five concrete kinds plus Null. Dates are ISO-8601 strings compared
lexicographically, which orders them correctly. Equality with a Null
operand is false and inequalities never hold for Null; there is no
three-valued logic anywhere in the engine.
"""

from __future__ import annotations

import enum
import re

from .errors import CsvError, ValidationError

_DATE_RE = re.compile(r"\d{4}-\d{2}-\d{2}")


class Kind(enum.Enum):
    INT = "int"
    FLOAT = "float"
    STR = "str"
    BOOL = "bool"
    DATE = "date"

    @classmethod
    def parse(cls, text: str) -> "Kind":
        try:
            return cls(text.lower())
        except ValueError:
            raise ValidationError(f"unknown kind {text!r}") from None


NULL = None

# Comparison groups: kinds in the same group are mutually comparable.
_NUMERIC = {Kind.INT, Kind.FLOAT}
_TEXTUAL = {Kind.STR, Kind.DATE}


def kinds_comparable(a: Kind, b: Kind) -> bool:
    if a == b:
        return True
    if a in _NUMERIC and b in _NUMERIC:
        return True
    if a in _TEXTUAL and b in _TEXTUAL:
        return True
    return False


def kind_of(value) -> Kind | None:
    """Kind of a concrete value; None for Null. Bool checked before int."""
    if value is None:
        return None
    if isinstance(value, bool):
        return Kind.BOOL
    if isinstance(value, int):
        return Kind.INT
    if isinstance(value, float):
        return Kind.FLOAT
    if isinstance(value, str):
        return Kind.STR  # date values are also str; schema decides
    raise ValidationError(f"unsupported value {value!r}")


def parse_cell(text: str, kind: Kind, row: int | None = None, col: str | None = None):
    """Parse one CSV cell. Empty string is Null."""
    if text == "":
        return NULL
    try:
        if kind == Kind.INT:
            return int(text)
        if kind == Kind.FLOAT:
            return float(text)
        if kind == Kind.BOOL:
            if text.lower() in ("true", "1"):
                return True
            if text.lower() in ("false", "0"):
                return False
            raise ValueError(text)
        if kind == Kind.DATE:
            if not _DATE_RE.fullmatch(text):
                raise ValueError(text)
            return text
        return text  # STR stays as-is
    except ValueError:
        raise CsvError(f"cannot parse {text!r} as {kind.value}", row, col) from None


def render_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def values_equal(a, b) -> bool:
    """Predicate equality: false whenever either side is Null."""
    if a is None or b is None:
        return False
    if isinstance(a, bool) != isinstance(b, bool):
        return False
    return a == b


def values_compare(a, b, op: str) -> bool:
    """Ordered comparison; never holds if either side is Null."""
    if a is None or b is None:
        return False
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    if op == ">=":
        return a >= b
    raise ValidationError(f"unknown comparison {op!r}")

"""Expression language: AST, prefix text form, evaluation, type checking.

Expressions appear in operator parameters (filter predicates, computed
columns, join conditions) and in the predicates the engine pushes around.
The text form is a prefix s-expression, e.g. ``(< l_commitdate l_receiptdate)``.
Parameters are written ``$name`` and bound at concretization time; set
variables are written ``@name`` and range over sets of column values,
used only inside the membership form ``(in expr @name)``.

Null never satisfies equality, ordered comparison, or set membership;
arithmetic over Null yields Null.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import PipelineSyntaxError, UnboundParameterError, ValidationError
from .values import Kind, kinds_comparable, values_compare, values_equal


class Expr:
    __slots__ = ()


@dataclass(frozen=True)
class Col(Expr):
    name: str


@dataclass(frozen=True)
class Lit(Expr):
    value: object  # int | float | str | bool | None


@dataclass(frozen=True)
class Param(Expr):
    name: str


@dataclass(frozen=True)
class SetMember(Expr):
    item: Expr
    setvar: str


@dataclass(frozen=True)
class Arith(Expr):
    op: str  # + - * / %
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Cmp(Expr):
    op: str  # == != < <= > >=
    left: Expr
    right: Expr


@dataclass(frozen=True)
class And(Expr):
    items: tuple[Expr, ...]


@dataclass(frozen=True)
class Or(Expr):
    items: tuple[Expr, ...]


@dataclass(frozen=True)
class Not(Expr):
    item: Expr


@dataclass(frozen=True)
class If(Expr):
    cond: Expr
    then: Expr
    other: Expr


@dataclass(frozen=True)
class Tup(Expr):
    items: tuple[Expr, ...]


@dataclass(frozen=True)
class Idx(Expr):
    item: Expr
    k: int


@dataclass(frozen=True)
class Fn(Expr):
    name: str  # concat | abs | isnull
    args: tuple[Expr, ...]


TRUE = Lit(True)
FALSE = Lit(False)

_FN_ARITY = {"concat": 2, "abs": 1, "isnull": 1}


# ---------------------------------------------------------------------------
# parsing / printing
# ---------------------------------------------------------------------------

_TOKEN = re.compile(
    r"""\s*(?:
        (?P<open>\()
      | (?P<close>\))
      | (?P<str>"(?:[^"\\]|\\.)*")
      | (?P<float>-?\d+\.\d*)
      | (?P<int>-?\d+)
      | (?P<param>\$[A-Za-z_][A-Za-z0-9_.]*)
      | (?P<setvar>@[A-Za-z_][A-Za-z0-9_.]*)
      | (?P<sym>[A-Za-z_][A-Za-z0-9_.]*|[+\-*/%]|[=!<>]=|[<>])
    )\s*""",
    re.VERBOSE,
)


def _tokenize(text: str) -> list[str]:
    toks = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos:].isspace():
            break
        m = _TOKEN.match(text, pos)
        if not m:
            raise PipelineSyntaxError(f"bad token at {text[pos:pos + 20]!r}")
        toks.append(m.group().strip())
        pos = m.end()
    return toks


def parse_expr(text: str) -> Expr:
    toks = _tokenize(text)
    if not toks:
        raise PipelineSyntaxError("empty expression")
    expr, rest = _parse_one(toks)
    if rest:
        raise PipelineSyntaxError(f"trailing tokens after expression: {rest[:3]}")
    return expr


def _parse_one(toks: list[str]) -> tuple[Expr, list[str]]:
    tok, rest = toks[0], toks[1:]
    if tok == "(":
        if not rest:
            raise PipelineSyntaxError("unclosed '('")
        head, rest = rest[0], rest[1:]
        if head == "in":
            item, rest = _parse_one(rest)
            if not rest or not rest[0].startswith("@"):
                raise PipelineSyntaxError("(in expr @set) needs a set variable")
            setvar, rest = rest[0][1:], rest[1:]
            if not rest or rest[0] != ")":
                raise PipelineSyntaxError("(in ...) takes exactly 2 arguments")
            return SetMember(item, setvar), rest[1:]
        args: list[Expr] = []
        while rest and rest[0] != ")":
            arg, rest = _parse_one(rest)
            args.append(arg)
        if not rest:
            raise PipelineSyntaxError("unclosed '('")
        return _build(head, args), rest[1:]
    if tok == ")":
        raise PipelineSyntaxError("unexpected ')'")
    return _parse_atom(tok), rest


def _parse_atom(tok: str) -> Expr:
    if tok.startswith('"'):
        return Lit(tok[1:-1].replace('\\"', '"').replace("\\\\", "\\"))
    if tok.startswith("$"):
        return Param(tok[1:])
    if tok.startswith("@"):
        raise PipelineSyntaxError("set variable outside (in ...) form")
    if re.fullmatch(r"-?\d+\.\d*", tok):
        return Lit(float(tok))
    if re.fullmatch(r"-?\d+", tok):
        return Lit(int(tok))
    if tok == "true":
        return TRUE
    if tok == "false":
        return FALSE
    if tok == "null":
        return Lit(None)
    if tok in ("(", ")"):
        raise PipelineSyntaxError(f"unexpected {tok!r}")
    return Col(tok)


def _build(head: str, args: list[Expr]) -> Expr:
    def need(n):
        if len(args) != n:
            raise PipelineSyntaxError(f"({head} ...) takes {n} arguments, got {len(args)}")

    if head in ("+", "-", "*", "/", "%"):
        need(2)
        return Arith(head, args[0], args[1])
    if head in ("==", "!=", "<", "<=", ">", ">="):
        need(2)
        return Cmp(head, args[0], args[1])
    if head in ("and", "or"):
        if len(args) < 2:
            raise PipelineSyntaxError(f"({head} ...) takes at least 2 arguments")
        return And(tuple(args)) if head == "and" else Or(tuple(args))
    if head == "not":
        need(1)
        return Not(args[0])
    if head == "if":
        need(3)
        return If(args[0], args[1], args[2])
    if head == "tuple":
        if not args:
            raise PipelineSyntaxError("(tuple ...) needs at least one element")
        return Tup(tuple(args))
    if head == "index":
        need(2)
        k = args[1]
        if not isinstance(k, Lit) or not isinstance(k.value, int) or isinstance(k.value, bool):
            raise PipelineSyntaxError("(index e k) needs an integer literal k")
        return Idx(args[0], k.value)
    if head in _FN_ARITY:
        need(_FN_ARITY[head])
        return Fn(head, tuple(args))
    raise PipelineSyntaxError(f"unknown operator {head!r}")


def print_expr(e: Expr) -> str:
    if isinstance(e, Col):
        return e.name
    if isinstance(e, Lit):
        v = e.value
        if v is None:
            return "null"
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
        if isinstance(v, float):
            text = repr(v)
            return text if ("." in text or "e" in text) else text + ".0"
        return str(v)
    if isinstance(e, Param):
        return "$" + e.name
    if isinstance(e, SetMember):
        return f"(in {print_expr(e.item)} @{e.setvar})"
    if isinstance(e, Arith):
        return f"({e.op} {print_expr(e.left)} {print_expr(e.right)})"
    if isinstance(e, Cmp):
        return f"({e.op} {print_expr(e.left)} {print_expr(e.right)})"
    if isinstance(e, And):
        return "(and " + " ".join(print_expr(x) for x in e.items) + ")"
    if isinstance(e, Or):
        return "(or " + " ".join(print_expr(x) for x in e.items) + ")"
    if isinstance(e, Not):
        return f"(not {print_expr(e.item)})"
    if isinstance(e, If):
        return f"(if {print_expr(e.cond)} {print_expr(e.then)} {print_expr(e.other)})"
    if isinstance(e, Tup):
        return "(tuple " + " ".join(print_expr(x) for x in e.items) + ")"
    if isinstance(e, Idx):
        return f"(index {print_expr(e.item)} {e.k})"
    if isinstance(e, Fn):
        return f"({e.name} " + " ".join(print_expr(x) for x in e.args) + ")"
    raise ValidationError(f"cannot print {e!r}")


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def eval_expr(e: Expr, row: dict, params: dict | None = None, sets: dict | None = None):
    """Evaluate over one row. ``row`` maps column name to value; ``params``
    maps parameter name to value; ``sets`` maps set variable name to a
    container of values. Unbound names raise UnboundParameterError."""
    if isinstance(e, Col):
        try:
            return row[e.name]
        except KeyError:
            raise ValidationError(f"unknown column {e.name!r}") from None
    if isinstance(e, Lit):
        return e.value
    if isinstance(e, Param):
        if params is None or e.name not in params:
            raise UnboundParameterError(f"parameter ${e.name} is unbound")
        return params[e.name]
    if isinstance(e, SetMember):
        if sets is None or e.setvar not in sets:
            raise UnboundParameterError(f"set variable @{e.setvar} is unbound")
        v = eval_expr(e.item, row, params, sets)
        if v is None:
            return False  # membership never holds for Null
        return v in sets[e.setvar]
    if isinstance(e, Arith):
        a = eval_expr(e.left, row, params, sets)
        b = eval_expr(e.right, row, params, sets)
        if a is None or b is None:
            return None
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            if isinstance(a, int) and isinstance(b, int):
                return a // b  # floor division keeps Int closed under /
            return a / b
        if e.op == "%":
            return a % b
    if isinstance(e, Cmp):
        a = eval_expr(e.left, row, params, sets)
        b = eval_expr(e.right, row, params, sets)
        if e.op == "==":
            return values_equal(a, b)
        if e.op == "!=":
            return not values_equal(a, b)
        return values_compare(a, b, e.op)
    if isinstance(e, And):
        return all(_truthy(eval_expr(x, row, params, sets)) for x in e.items)
    if isinstance(e, Or):
        return any(_truthy(eval_expr(x, row, params, sets)) for x in e.items)
    if isinstance(e, Not):
        return not _truthy(eval_expr(e.item, row, params, sets))
    if isinstance(e, If):
        if _truthy(eval_expr(e.cond, row, params, sets)):
            return eval_expr(e.then, row, params, sets)
        return eval_expr(e.other, row, params, sets)
    if isinstance(e, Tup):
        return tuple(eval_expr(x, row, params, sets) for x in e.items)
    if isinstance(e, Idx):
        t = eval_expr(e.item, row, params, sets)
        if not isinstance(t, tuple) or e.k >= len(t):
            raise ValidationError(f"(index ...) out of range: {e.k}")
        return t[e.k]
    if isinstance(e, Fn):
        vals = [eval_expr(x, row, params, sets) for x in e.args]
        if e.name == "isnull":
            return vals[0] is None
        if any(v is None for v in vals):
            return None
        if e.name == "concat":
            return str(vals[0]) + str(vals[1])
        if e.name == "abs":
            return abs(vals[0])
    raise ValidationError(f"cannot evaluate {e!r}")


def _truthy(v) -> bool:
    # Null in a boolean position fails the test, same as every comparison.
    return v is True


# ---------------------------------------------------------------------------
# type checking
# ---------------------------------------------------------------------------

BOOL = Kind.BOOL


def check_expr(e: Expr, env: dict[str, Kind], param_kinds: dict[str, Kind] | None = None) -> Kind | None:
    """Return the kind an expression produces under ``env``. Parameters of
    unknown kind unify with whatever they are compared against; a None
    return means the kind is not statically known (params, Null literal)."""
    if isinstance(e, Col):
        if e.name not in env:
            raise ValidationError(f"unknown column {e.name!r}")
        return env[e.name]
    if isinstance(e, Lit):
        if e.value is None:
            return None
        if isinstance(e.value, bool):
            return Kind.BOOL
        if isinstance(e.value, int):
            return Kind.INT
        if isinstance(e.value, float):
            return Kind.FLOAT
        return Kind.STR
    if isinstance(e, Param):
        if param_kinds and e.name in param_kinds:
            return param_kinds[e.name]
        return None
    if isinstance(e, SetMember):
        check_expr(e.item, env, param_kinds)
        return Kind.BOOL
    if isinstance(e, Arith):
        a = check_expr(e.left, env, param_kinds)
        b = check_expr(e.right, env, param_kinds)
        for k in (a, b):
            if k is not None and k not in (Kind.INT, Kind.FLOAT):
                raise ValidationError(f"arithmetic over {k.value}")
        if Kind.FLOAT in (a, b):
            return Kind.FLOAT
        if a is None or b is None:
            return None
        return Kind.INT
    if isinstance(e, Cmp):
        a = check_expr(e.left, env, param_kinds)
        b = check_expr(e.right, env, param_kinds)
        if a is not None and b is not None and not kinds_comparable(a, b):
            # equality against Null is legal and false; Lit(None) returns None
            raise ValidationError(f"cannot compare {a.value} with {b.value}")
        return Kind.BOOL
    if isinstance(e, (And, Or)):
        for x in e.items:
            _require_bool(check_expr(x, env, param_kinds))
        return Kind.BOOL
    if isinstance(e, Not):
        _require_bool(check_expr(e.item, env, param_kinds))
        return Kind.BOOL
    if isinstance(e, If):
        _require_bool(check_expr(e.cond, env, param_kinds))
        a = check_expr(e.then, env, param_kinds)
        b = check_expr(e.other, env, param_kinds)
        if a is not None and b is not None and not kinds_comparable(a, b):
            raise ValidationError("(if ...) branches have incompatible kinds")
        return a if a is not None else b
    if isinstance(e, Tup):
        kinds = [check_expr(x, env, param_kinds) for x in e.items]
        concrete = [k for k in kinds if k is not None]
        for k in concrete[1:]:
            if not kinds_comparable(concrete[0], k):
                raise ValidationError("(tuple ...) elements have incompatible kinds")
        return concrete[0] if concrete else None
    if isinstance(e, Idx):
        return check_expr(e.item, env, param_kinds)
    if isinstance(e, Fn):
        kinds = [check_expr(x, env, param_kinds) for x in e.args]
        if e.name == "isnull":
            return Kind.BOOL
        if e.name == "concat":
            for k in kinds:
                if k is not None and k not in (Kind.STR, Kind.DATE):
                    raise ValidationError("concat needs textual arguments")
            return Kind.STR
        if e.name == "abs":
            if kinds[0] is not None and kinds[0] not in (Kind.INT, Kind.FLOAT):
                raise ValidationError("abs needs a numeric argument")
            return kinds[0]
    raise ValidationError(f"cannot type {e!r}")


def _require_bool(k: Kind | None):
    if k is not None and k != Kind.BOOL:
        raise ValidationError(f"expected bool, got {k.value}")


# ---------------------------------------------------------------------------
# structure helpers
# ---------------------------------------------------------------------------


def walk(e: Expr):
    yield e
    if isinstance(e, SetMember):
        yield from walk(e.item)
    elif isinstance(e, Arith):
        yield from walk(e.left)
        yield from walk(e.right)
    elif isinstance(e, Cmp):
        yield from walk(e.left)
        yield from walk(e.right)
    elif isinstance(e, (And, Or, Tup)):
        for x in e.items:
            yield from walk(x)
    elif isinstance(e, Not):
        yield from walk(e.item)
    elif isinstance(e, If):
        yield from walk(e.cond)
        yield from walk(e.then)
        yield from walk(e.other)
    elif isinstance(e, Idx):
        yield from walk(e.item)
    elif isinstance(e, Fn):
        for x in e.args:
            yield from walk(x)


def cols_of(e: Expr) -> set[str]:
    return {x.name for x in walk(e) if isinstance(x, Col)}


def params_of(e: Expr) -> set[str]:
    return {x.name for x in walk(e) if isinstance(x, Param)}


def setvars_of(e: Expr) -> set[str]:
    return {x.setvar for x in walk(e) if isinstance(x, SetMember)}


def _rebuild(e: Expr, fn) -> Expr:
    """Apply ``fn`` bottom-up; fn receives a node with rebuilt children."""
    if isinstance(e, SetMember):
        e = SetMember(_rebuild(e.item, fn), e.setvar)
    elif isinstance(e, Arith):
        e = Arith(e.op, _rebuild(e.left, fn), _rebuild(e.right, fn))
    elif isinstance(e, Cmp):
        e = Cmp(e.op, _rebuild(e.left, fn), _rebuild(e.right, fn))
    elif isinstance(e, And):
        e = And(tuple(_rebuild(x, fn) for x in e.items))
    elif isinstance(e, Or):
        e = Or(tuple(_rebuild(x, fn) for x in e.items))
    elif isinstance(e, Not):
        e = Not(_rebuild(e.item, fn))
    elif isinstance(e, If):
        e = If(_rebuild(e.cond, fn), _rebuild(e.then, fn), _rebuild(e.other, fn))
    elif isinstance(e, Tup):
        e = Tup(tuple(_rebuild(x, fn) for x in e.items))
    elif isinstance(e, Idx):
        e = Idx(_rebuild(e.item, fn), e.k)
    elif isinstance(e, Fn):
        e = Fn(e.name, tuple(_rebuild(x, fn) for x in e.args))
    return fn(e)


def subst_cols(e: Expr, mapping: dict[str, Expr]) -> Expr:
    """Replace column references; unmapped columns raise KeyError."""

    def fn(x):
        if isinstance(x, Col):
            return mapping[x.name]
        return x

    return _rebuild(e, fn)


def subst_params(e: Expr, bindings: dict[str, object]) -> Expr:
    """Replace bound parameters with literals; unbound ones stay."""

    def fn(x):
        if isinstance(x, Param) and x.name in bindings:
            v = bindings[x.name]
            return v if isinstance(v, Expr) else Lit(v)
        return x

    return _rebuild(e, fn)


def rename_params(e: Expr, mapping: dict[str, str]) -> Expr:
    def fn(x):
        if isinstance(x, Param) and x.name in mapping:
            return Param(mapping[x.name])
        return x

    return _rebuild(e, fn)


def conjuncts(e: Expr) -> list[Expr]:
    """Flatten nested conjunction; literal true vanishes."""
    if isinstance(e, And):
        out = []
        for x in e.items:
            out.extend(conjuncts(x))
        return out
    if e == TRUE:
        return []
    return [e]


def conj(items: list[Expr]) -> Expr:
    flat = []
    for x in items:
        flat.extend(conjuncts(x))
    seen = []
    for x in flat:
        if x == FALSE:
            return FALSE
        if x not in seen:
            seen.append(x)
    if not seen:
        return TRUE
    if len(seen) == 1:
        return seen[0]
    return And(tuple(seen))


def disj(items: list[Expr]) -> Expr:
    flat = []
    for x in items:
        if isinstance(x, Or):
            flat.extend(x.items)
        elif x == TRUE:
            return TRUE
        elif x != FALSE:
            flat.append(x)
    seen = []
    for x in flat:
        if x not in seen:
            seen.append(x)
    if not seen:
        return FALSE
    if len(seen) == 1:
        return seen[0]
    return Or(tuple(seen))

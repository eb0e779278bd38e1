"""Filtering conditions over attribute records.

A condition is an immutable expression tree.  It can be evaluated against a
single :class:`~filtann.core.AttributeRecord`, against a whole
:class:`~filtann.core.AttributeTable` at once (``mask``), or compiled into a
flat postfix program that the numba search kernels evaluate per visited node.

Text syntax (keywords are case-insensitive)::

    expr      := and_expr ("or" and_expr)*
    and_expr  := not_expr ("and" not_expr)*
    not_expr  := "not" not_expr | atom
    atom      := "(" expr ")" | "true" | predicate
    predicate := boolN "=" ("true" | "false")
               | intN "=" INT
               | intN "in" "{" INT ("," INT)* "}"
               | floatN "in" "[" NUM "," NUM "]"
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np

from .core import AttributeRecord, AttributeTable, UsageError, VectorDataset


class SchemaError(UsageError):
    """A condition references an attribute the schema does not have."""


class FilterSyntaxError(UsageError):
    def __init__(self, message: str, position: int, text: str = ""):
        self.position = position
        self.text = text
        super().__init__(f"{message} at position {position}")


@dataclass(frozen=True)
class TrueCond:
    pass


@dataclass(frozen=True)
class BoolEq:
    attr: int
    value: bool


@dataclass(frozen=True)
class IntEq:
    attr: int
    value: int


@dataclass(frozen=True)
class IntIn:
    attr: int
    values: frozenset

    def __post_init__(self):
        object.__setattr__(self, "values", frozenset(int(v) for v in self.values))
        if not self.values:
            raise UsageError("IntIn requires a non-empty value set")


@dataclass(frozen=True)
class FloatRange:
    """Closed interval ``low <= x <= high``."""

    attr: int
    low: float
    high: float

    def __post_init__(self):
        if not (math.isfinite(self.low) and math.isfinite(self.high)):
            raise UsageError("range bounds must be finite")
        if self.low > self.high:
            raise UsageError(f"malformed range: low {self.low} > high {self.high}")


@dataclass(frozen=True)
class And:
    children: tuple

    def __init__(self, *children):
        if len(children) == 1 and isinstance(children[0], (list, tuple)):
            children = tuple(children[0])
        if len(children) < 2:
            raise UsageError("And needs at least two children")
        object.__setattr__(self, "children", tuple(children))


@dataclass(frozen=True)
class Or:
    children: tuple

    def __init__(self, *children):
        if len(children) == 1 and isinstance(children[0], (list, tuple)):
            children = tuple(children[0])
        if len(children) < 2:
            raise UsageError("Or needs at least two children")
        object.__setattr__(self, "children", tuple(children))


@dataclass(frozen=True)
class Not:
    child: "FilterCondition"


FilterCondition = Union[TrueCond, BoolEq, IntEq, IntIn, FloatRange, And, Or, Not]
TRUE = TrueCond()


def validate(f: FilterCondition, arity: tuple[int, int, int]) -> None:
    """Raise :class:`SchemaError` if ``f`` indexes past the attribute arity."""
    n_bool, n_int, n_float = arity
    if isinstance(f, TrueCond):
        return
    if isinstance(f, BoolEq):
        if not 0 <= f.attr < n_bool:
            raise SchemaError(f"bool{f.attr} out of range (schema has {n_bool} bool attributes)")
    elif isinstance(f, (IntEq, IntIn)):
        if not 0 <= f.attr < n_int:
            raise SchemaError(f"int{f.attr} out of range (schema has {n_int} int attributes)")
    elif isinstance(f, FloatRange):
        if not 0 <= f.attr < n_float:
            raise SchemaError(f"float{f.attr} out of range (schema has {n_float} float attributes)")
    elif isinstance(f, (And, Or)):
        for c in f.children:
            validate(c, arity)
    elif isinstance(f, Not):
        validate(f.child, arity)
    else:
        raise TypeError(f"not a filter condition: {f!r}")


def evaluate(f: FilterCondition, a: AttributeRecord) -> bool:
    """True iff record ``a`` satisfies ``f``."""
    if isinstance(f, TrueCond):
        return True
    try:
        if isinstance(f, BoolEq):
            return bool(a.bools[f.attr]) == f.value
        if isinstance(f, IntEq):
            return int(a.ints[f.attr]) == f.value
        if isinstance(f, IntIn):
            return int(a.ints[f.attr]) in f.values
        if isinstance(f, FloatRange):
            return f.low <= float(a.floats[f.attr]) <= f.high
    except IndexError:
        raise SchemaError(f"{f!r} references a missing attribute") from None
    if isinstance(f, And):
        return all(evaluate(c, a) for c in f.children)
    if isinstance(f, Or):
        return any(evaluate(c, a) for c in f.children)
    if isinstance(f, Not):
        return not evaluate(f.child, a)
    raise TypeError(f"not a filter condition: {f!r}")


def mask(f: FilterCondition, attrs: AttributeTable) -> np.ndarray:
    """Vectorized ``evaluate`` over every row of ``attrs``."""
    validate(f, attrs.arity)
    return _mask(f, attrs)


def _mask(f, attrs):
    n = len(attrs)
    if isinstance(f, TrueCond):
        return np.ones(n, dtype=bool)
    if isinstance(f, BoolEq):
        return (attrs.bools[:, f.attr] != 0) == f.value
    if isinstance(f, IntEq):
        return attrs.ints[:, f.attr] == f.value
    if isinstance(f, IntIn):
        return np.isin(attrs.ints[:, f.attr], np.fromiter(f.values, np.int64))
    if isinstance(f, FloatRange):
        col = attrs.floats[:, f.attr].astype(np.float64)
        return (col >= f.low) & (col <= f.high)
    if isinstance(f, And):
        out = _mask(f.children[0], attrs)
        for c in f.children[1:]:
            out &= _mask(c, attrs)
        return out
    if isinstance(f, Or):
        out = _mask(f.children[0], attrs)
        for c in f.children[1:]:
            out |= _mask(c, attrs)
        return out
    if isinstance(f, Not):
        return ~_mask(f.child, attrs)
    raise TypeError(f"not a filter condition: {f!r}")


def exact_selectivity(f: FilterCondition, ds: VectorDataset) -> float:
    if ds.count == 0:
        return 0.0
    return float(np.count_nonzero(mask(f, ds.attributes))) / ds.count


# -- compiled form ---------------------------------------------------------

OP_TRUE, OP_BOOL_EQ, OP_INT_EQ, OP_INT_IN, OP_FLOAT_RANGE, OP_AND, OP_OR, OP_NOT = range(8)


class FilterProgram(NamedTuple):
    """Postfix encoding of a condition.

    ``ops[i] = (opcode, a, b, c)``; range bounds live in ``fargs[i]``;
    ``IntIn`` sets are slices ``setvals[b:b + c]``.
    """

    ops: np.ndarray
    fargs: np.ndarray
    setvals: np.ndarray


def compile_filter(f: FilterCondition) -> FilterProgram:
    ops: list[tuple[int, int, int, int]] = []
    fargs: list[tuple[float, float]] = []
    setvals: list[int] = []

    def emit(code, a=0, b=0, c=0, lo=0.0, hi=0.0):
        ops.append((code, a, b, c))
        fargs.append((lo, hi))

    def walk(node):
        if isinstance(node, TrueCond):
            emit(OP_TRUE)
        elif isinstance(node, BoolEq):
            emit(OP_BOOL_EQ, node.attr, int(node.value))
        elif isinstance(node, IntEq):
            emit(OP_INT_EQ, node.attr, node.value)
        elif isinstance(node, IntIn):
            vals = sorted(node.values)
            emit(OP_INT_IN, node.attr, len(setvals), len(vals))
            setvals.extend(vals)
        elif isinstance(node, FloatRange):
            emit(OP_FLOAT_RANGE, node.attr, lo=node.low, hi=node.high)
        elif isinstance(node, (And, Or)):
            for c in node.children:
                walk(c)
            emit(OP_AND if isinstance(node, And) else OP_OR, len(node.children))
        elif isinstance(node, Not):
            walk(node.child)
            emit(OP_NOT)
        else:
            raise TypeError(f"not a filter condition: {node!r}")

    walk(f)
    return FilterProgram(
        np.array(ops, dtype=np.int64).reshape(-1, 4),
        np.array(fargs, dtype=np.float64).reshape(-1, 2),
        np.array(setvals if setvals else [0], dtype=np.int64),
    )


# -- text form -------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?)
  | (?P<word>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<punct>[(){}\[\],=])
    """,
    re.VERBOSE,
)
_ATTR = re.compile(r"(bool|int|float)(\d+)$", re.IGNORECASE)
_KEYWORDS = {"and", "or", "not", "in", "true", "false"}


class _Tok(NamedTuple):
    kind: str
    text: str
    pos: int


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise FilterSyntaxError(f"unexpected character {text[pos]!r}", pos, text)
        kind = m.lastgroup
        if kind != "ws":
            toks.append(_Tok(kind, m.group(), pos))
        pos = m.end()
    toks.append(_Tok("end", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def cur(self) -> _Tok:
        return self.toks[self.i]

    def error(self, msg, tok=None):
        tok = tok or self.cur
        return FilterSyntaxError(msg, tok.pos, self.text)

    def keyword(self, word) -> bool:
        t = self.cur
        if t.kind == "word" and t.text.lower() == word:
            self.i += 1
            return True
        return False

    def expect(self, punct):
        t = self.cur
        if t.kind != "punct" or t.text != punct:
            raise self.error(f"expected {punct!r}, found {t.text or 'end of input'!r}")
        self.i += 1

    def parse(self):
        if self.cur.kind == "end":
            raise self.error("empty filter")
        node = self.or_expr()
        if self.cur.kind != "end":
            raise self.error(f"unexpected {self.cur.text!r}")
        return node

    def or_expr(self):
        parts = [self.and_expr()]
        while self.keyword("or"):
            parts.append(self.and_expr())
        return parts[0] if len(parts) == 1 else Or(parts)

    def and_expr(self):
        parts = [self.not_expr()]
        while self.keyword("and"):
            parts.append(self.not_expr())
        return parts[0] if len(parts) == 1 else And(parts)

    def not_expr(self):
        if self.keyword("not"):
            return Not(self.not_expr())
        return self.atom()

    def atom(self):
        t = self.cur
        if t.kind == "punct" and t.text == "(":
            self.i += 1
            node = self.or_expr()
            self.expect(")")
            return node
        if self.keyword("true"):
            return TRUE
        if t.kind != "word" or t.text.lower() in _KEYWORDS:
            raise self.error(f"expected a predicate, found {t.text or 'end of input'!r}")
        m = _ATTR.match(t.text)
        if m is None:
            raise self.error(f"unknown attribute {t.text!r}")
        self.i += 1
        kind, idx = m.group(1).lower(), int(m.group(2))
        if kind == "bool":
            self.expect("=")
            if self.keyword("true"):
                return BoolEq(idx, True)
            if self.keyword("false"):
                return BoolEq(idx, False)
            raise self.error("expected true or false")
        if kind == "int":
            if self.cur.kind == "punct" and self.cur.text == "=":
                self.i += 1
                return IntEq(idx, self.integer())
            if not self.keyword("in"):
                raise self.error("expected '=' or 'in'")
            self.expect("{")
            vals = [self.integer()]
            while self.cur.kind == "punct" and self.cur.text == ",":
                self.i += 1
                vals.append(self.integer())
            self.expect("}")
            return IntIn(idx, frozenset(vals))
        if not self.keyword("in"):
            raise self.error("expected 'in' after float attribute")
        start = self.cur
        self.expect("[")
        lo = self.number()
        self.expect(",")
        hi = self.number()
        self.expect("]")
        if lo > hi:
            raise self.error(f"malformed range [{lo}, {hi}]", start)
        return FloatRange(idx, lo, hi)

    def integer(self) -> int:
        t = self.cur
        if t.kind != "num" or not re.fullmatch(r"[-+]?\d+", t.text):
            raise self.error(f"expected an integer, found {t.text or 'end of input'!r}")
        self.i += 1
        return int(t.text)

    def number(self) -> float:
        t = self.cur
        if t.kind != "num":
            raise self.error(f"expected a number, found {t.text or 'end of input'!r}")
        self.i += 1
        return float(t.text)


def parse_filter(text: str, arity: tuple[int, int, int] | None = None) -> FilterCondition:
    """Parse ``text``; if ``arity`` is given, also check attribute indices."""
    node = _Parser(text).parse()
    if arity is not None:
        validate(node, arity)
    return node


def render(f: FilterCondition) -> str:
    """Inverse of :func:`parse_filter` up to whitespace."""

    def wrap(child):
        s = render(child)
        return f"({s})" if isinstance(child, (And, Or)) else s

    if isinstance(f, TrueCond):
        return "true"
    if isinstance(f, BoolEq):
        return f"bool{f.attr} = {'true' if f.value else 'false'}"
    if isinstance(f, IntEq):
        return f"int{f.attr} = {f.value}"
    if isinstance(f, IntIn):
        return f"int{f.attr} in {{{', '.join(str(v) for v in sorted(f.values))}}}"
    if isinstance(f, FloatRange):
        return f"float{f.attr} in [{f.low!r}, {f.high!r}]"
    if isinstance(f, And):
        return " and ".join(wrap(c) for c in f.children)
    if isinstance(f, Or):
        return " or ".join(wrap(c) for c in f.children)
    if isinstance(f, Not):
        return f"not {wrap(f.child)}"
    raise TypeError(f"not a filter condition: {f!r}")

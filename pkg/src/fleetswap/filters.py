"""Boolean predicates over a single sample value ``x``.

Comparators bind tighter than ``and``, which binds tighter than ``or``;
parentheses override. A NaN sample fails every comparison, ``!=`` included.
"""

import math
import operator
from dataclasses import dataclass
from typing import Callable

from lark import Lark, Token, Transformer
from lark.exceptions import UnexpectedCharacters, UnexpectedEOF, UnexpectedInput, VisitError

from fleetswap.errors import FilterSyntaxError, UnknownIdentifier

VARIABLE = "x"

FILTER_GRAMMAR = r"""
    ?start: disjunction

    ?disjunction: conjunction ("or" conjunction)*
    ?conjunction: _atom ("and" _atom)*
    _atom: comparison | "(" disjunction ")"

    comparison: _operand COMPARATOR _operand
    _operand: NAME | NUMBER

    COMPARATOR: "<=" | ">=" | "==" | "!=" | "<" | ">"
    NAME: /[A-Za-z_][A-Za-z0-9_]*/
    NUMBER: /[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?/

    %import common.WS
    %ignore WS
"""

COMPARATORS: dict[str, Callable[[float, float], bool]] = {
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
    "==": operator.eq,
    "!=": operator.ne,
}


@dataclass(frozen=True)
class Var:
    def __str__(self) -> str:
        return VARIABLE


@dataclass(frozen=True)
class Num:
    value: float

    def __str__(self) -> str:
        return repr(self.value)


@dataclass(frozen=True)
class Compare:
    op: str
    left: Var | Num
    right: Var | Num

    def __str__(self) -> str:
        return f"{self.left} {self.op} {self.right}"


@dataclass(frozen=True)
class And:
    terms: tuple["FilterExpr", ...]

    def __str__(self) -> str:
        return " and ".join(f"({t})" for t in self.terms)


@dataclass(frozen=True)
class Or:
    terms: tuple["FilterExpr", ...]

    def __str__(self) -> str:
        return " or ".join(f"({t})" for t in self.terms)


FilterExpr = Compare | And | Or

X = Var()


class _TreeToFilter(Transformer):
    def __init__(self, text: str):
        super().__init__()
        self._text = text

    def _operand(self, token: Token) -> Var | Num:
        if token.type == "NUMBER":
            return Num(float(token))
        if token != VARIABLE:
            raise UnknownIdentifier(str(token), _byte_offset(self._text, token.start_pos))
        return X

    def comparison(self, items):
        left, op, right = items
        return Compare(str(op), self._operand(left), self._operand(right))

    def conjunction(self, items):
        return And(tuple(items))

    def disjunction(self, items):
        return Or(tuple(items))


_PARSER = Lark(FILTER_GRAMMAR, parser="lalr")


def _byte_offset(text: str, char_pos: int | None) -> int:
    if char_pos is None:
        return len(text.encode("utf-8"))
    return len(text[:char_pos].encode("utf-8"))


def parse_filter(text: str) -> FilterExpr:
    if not text or not text.strip():
        raise FilterSyntaxError("empty filter", 0)
    try:
        tree = _PARSER.parse(text)
    except UnexpectedEOF:
        raise FilterSyntaxError("unexpected end of filter", _byte_offset(text, None)) from None
    except UnexpectedCharacters as exc:
        raise FilterSyntaxError(
            f"unexpected character {text[exc.pos_in_stream]!r}",
            _byte_offset(text, exc.pos_in_stream),
        ) from None
    except UnexpectedInput as exc:
        token = getattr(exc, "token", None)
        offset = getattr(token, "start_pos", None)
        if token is not None and getattr(token, "type", "") == "$END":
            offset = None
        raise FilterSyntaxError(f"unexpected token {token!s}", _byte_offset(text, offset)) from None
    try:
        return _TreeToFilter(text).transform(tree)
    except VisitError as exc:
        raise exc.orig_exc from None


def _value(operand: Var | Num, v: float) -> float:
    return v if isinstance(operand, Var) else operand.value


def eval_filter(expr: FilterExpr, v: float) -> bool:
    match expr:
        case Compare(op=op, left=left, right=right):
            if math.isnan(v):
                return False
            return COMPARATORS[op](_value(left, v), _value(right, v))
        case And(terms=terms):
            return all(eval_filter(t, v) for t in terms)
        case Or(terms=terms):
            return any(eval_filter(t, v) for t in terms)
    raise TypeError(f"not a filter expression: {expr!r}")

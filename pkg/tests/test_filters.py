import math
import operator
import os
import sys
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

# Add parent directory to path to import the package
sys.path.insert(0, os.path.join(str(Path(__file__).parent.parent), "src"))

from fleetswap.errors import FilterSyntaxError, UnknownIdentifier
from fleetswap.filters import X, And, Compare, Num, Or, eval_filter, parse_filter


def test_threshold():
    assert parse_filter("x > 100") == Compare(">", X, Num(100.0))


def test_conjunction():
    assert parse_filter("x >= 0 and x <= 1") == And(
        (Compare(">=", X, Num(0.0)), Compare("<=", X, Num(1.0)))
    )


def test_and_binds_tighter_than_or():
    expr = parse_filter("x < 0 or x > 1 and x < 2")
    assert isinstance(expr, Or)
    assert expr.terms[0] == Compare("<", X, Num(0.0))
    assert isinstance(expr.terms[1], And)


def test_parentheses_override():
    expr = parse_filter("(x < 0 or x > 1) and x < 2")
    assert isinstance(expr, And)
    assert isinstance(expr.terms[0], Or)


def test_unknown_identifier():
    with pytest.raises(UnknownIdentifier, match="unknown identifier y") as exc:
        parse_filter("y > 1")
    assert exc.value.offset == 0


def test_unknown_identifier_offset_is_in_bytes():
    with pytest.raises(UnknownIdentifier) as exc:
        parse_filter("x > 1 and speed < 2")
    assert exc.value.offset == 10


@pytest.mark.parametrize("text", ["", "x >", "x > > 1", "x > 1 and", "(x > 1", "x # 1"])
def test_syntax_errors(text):
    with pytest.raises(FilterSyntaxError):
        parse_filter(text)


def test_strict_threshold():
    expr = parse_filter("x > 100")
    assert eval_filter(expr, 101) is True
    assert eval_filter(expr, 100) is False


def test_inclusive_boundary():
    assert eval_filter(parse_filter("x >= 0 and x <= 1"), 0) is True


@pytest.mark.parametrize("text", ["x > 1", "x != 1", "x == x", "x < 0 or x >= 0"])
def test_nan_fails_everything(text):
    assert eval_filter(parse_filter(text), math.nan) is False


def test_number_on_the_left():
    assert eval_filter(parse_filter("100 < x"), 150) is True


OPS = {"<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge,
       "==": operator.eq, "!=": operator.ne}


def comparisons():
    operand = st.one_of(st.just("x"), st.integers(-1000, 1000).map(str))
    return st.tuples(operand, st.sampled_from(sorted(OPS)), operand)


def trees(depth=4):
    if depth == 0:
        return comparisons()
    sub = trees(depth - 1)
    return st.one_of(
        comparisons(),
        st.tuples(st.sampled_from(["and", "or"]), st.lists(sub, min_size=2, max_size=3)),
    )


def render(tree) -> str:
    if isinstance(tree[1], list):
        return "(" + f" {tree[0]} ".join(render(t) for t in tree[1]) + ")"
    return " ".join(tree)


def reference(tree, v: int) -> bool:
    if isinstance(tree[1], list):
        results = [reference(t, v) for t in tree[1]]
        return all(results) if tree[0] == "and" else any(results)
    left, op, right = tree
    value = lambda s: v if s == "x" else int(s)  # noqa: E731
    return OPS[op](value(left), value(right))


@settings(max_examples=300)
@given(trees(), st.integers(-1000, 1000))
def test_agrees_with_reference_evaluator(tree, v):
    assert eval_filter(parse_filter(render(tree)), v) == reference(tree, v)

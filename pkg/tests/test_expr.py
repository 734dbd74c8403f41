import pytest
from hypothesis import given
from hypothesis import strategies as st

from dogopt.errors import ExprSyntaxError, ExprTypeError, RowKeyError, SchemaError
from dogopt.expr import join_assignments, parse_assignments, parse_expr, split_assignments


@pytest.mark.parametrize(
    "text, row, want",
    [
        ("in.a + 2 * in.b", {"a": 1, "b": 3}, 7),
        ("in.a / 4", {"a": 2}, 0.5),
        ("in.a % 3", {"a": 7}, 1),
        ("-in.a", {"a": 2}, -2),
        ("in.a > 1 and not in.b", {"a": 2, "b": False}, True),
        ("1 < in.a <= 3", {"a": 3}, True),
        ("in.s == 'x' or in.a == null", {"s": "y", "a": None}, True),
        ('startswith(in.asin, "B0")', {"asin": "B012"}, True),
        ('concat(in.a, "-", in.b)', {"a": "p", "b": "q"}, "p-q"),
        ("length(in.t)", {"t": "four"}, 4),
        ("length(in.xs)", {"xs": [1, 2]}, 2),
        ("[in.a, 1]", {"a": 0}, [0, 1]),
        ("in.a if in.a > 0 else 0", {"a": -3}, 0),
        ("sum(in.xs)", {"xs": [1, 2, 3]}, 6),
        ("in.val.attr_2 + 1", {"val.attr_2": 4}, 5),
    ],
)
def test_evaluate(text, row, want):
    assert parse_expr(text).eval(row) == want


def test_refs_are_collected():
    e = parse_expr("in.a > 1 and startswith(in.val.b, 'x')")
    assert e.refs == frozenset({"a", "val.b"})


@pytest.mark.parametrize(
    "text, row",
    [
        ("in.a / in.b", {"a": 1, "b": 0}),
        ("in.a + 1", {"a": None}),
        ("in.a + 1", {"a": "s"}),
        ("in.a < 'x'", {"a": 1}),
        ("mean(in.xs)", {"xs": []}),
    ],
)
def test_type_errors(text, row):
    with pytest.raises(ExprTypeError):
        parse_expr(text).eval(row)


def test_missing_attribute():
    with pytest.raises(RowKeyError):
        parse_expr("in.zz + 1").eval({"a": 1})


@pytest.mark.parametrize("text", ["a + 1", "in.a +", "lambda: 1", "foo(in.a)", "sum(sum(in.a))", "in.a ** 2"])
def test_syntax_errors(text):
    with pytest.raises(ExprSyntaxError):
        parse_expr(text)


def test_assignments():
    assigns = parse_assignments("out.x = in.a; out.y = in.a + in.b")
    assert [a.target for a in assigns] == ["x", "y"]
    assert assigns[0].is_identity is False
    assert parse_assignments("out.a = in.a")[0].is_identity
    assert parse_assignments("   ") == []
    with pytest.raises(SchemaError):
        parse_assignments("out.x = 1; out.x = 2")
    with pytest.raises(ExprSyntaxError):
        parse_assignments("in.x = 1")


def test_group_position_aggregates():
    rows = [{"v": 1}, {"v": 4}, {"v": None}]
    assert parse_expr("sum(in.v)").eval_group(rows) == 5
    assert parse_expr("count()").eval_group(rows) == 3
    assert parse_expr("count(in.v)").eval_group(rows) == 2
    assert parse_expr("mean(in.v)").eval_group(rows) == 2.5
    assert parse_expr("collect(in.v)").eval_group(rows) == [1, 4]
    assert parse_expr("max(in.v) - min(in.v)").eval_group(rows) == 3


def test_split_keeps_layout():
    text = "out.a = in.a;  out.b = concat(in.b, 'in.x');out.c = in.c * 2"
    parts = split_assignments(text)
    assert parts == [("a", "out.a = in.a"), ("b", "out.b = concat(in.b, 'in.x')"), ("c", "out.c = in.c * 2")]
    again = parse_assignments(join_assignments([p for _, p in parts]))
    assert [a.target for a in again] == ["a", "b", "c"]


@given(st.integers(-100, 100), st.integers(-100, 100))
def test_arithmetic_agrees_with_python(a, b):
    row = {"a": a, "b": b}
    assert parse_expr("in.a * in.b - in.a").eval(row) == a * b - a
    assert parse_expr("in.a >= in.b").eval(row) == (a >= b)

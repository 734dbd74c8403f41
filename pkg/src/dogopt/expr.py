"""The mini expression language used inside UDFs.

Expressions borrow Python's surface syntax, so parsing goes through :mod:`ast`
after a token pass that renames the ``in`` keyword. Supported forms::

    in.score > 3 and startswith(in.asin, "B000")
    out.b = in.a + 1; out.c = in.c
    out.rating_sum = sum(in.rating); out.n = count()

Attribute references are ``in.<name>`` where ``<name>`` may be dotted
(``in.val.attr_2``). Aggregators (``sum count min max mean collect``) fold the
rows of a group in Group/Agg position and fold a list value in row position.
"""
from __future__ import annotations

import ast
import io
import math
import operator
import tokenize
from dataclasses import dataclass
from typing import Any, Callable, Sequence

from .errors import ExprSyntaxError, ExprTypeError, RowKeyError, SchemaError

AGGREGATORS = ("sum", "count", "min", "max", "mean", "collect")
SCALAR_FUNCS = ("startswith", "concat", "length")

_IN = "in_"
_OUT = "out"


def canonical_key(value):
    """Total order over expression values: null < bool < number < str < list."""
    if value is None:
        return (0,)
    if isinstance(value, bool):
        return (1, value)
    if isinstance(value, (int, float)):
        return (2, value)
    if isinstance(value, str):
        return (3, value)
    if isinstance(value, (list, tuple)):
        return (4, tuple(canonical_key(v) for v in value))
    raise ExprTypeError(f"unsupported value type {type(value).__name__}")


def hashable(value):
    if isinstance(value, list):
        return tuple(hashable(v) for v in value)
    return value


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _swap_names(text: str, old: str, new: str) -> str:
    """Replace NAME tokens ``old`` that are followed by a dot, keeping layout."""
    lines = text.splitlines(keepends=True)
    starts = [0]
    for ln in lines:
        starts.append(starts[-1] + len(ln))
    try:
        toks = list(tokenize.generate_tokens(io.StringIO(text).readline))
    except (tokenize.TokenError, IndentationError) as exc:
        raise ExprSyntaxError(f"cannot tokenize {text!r}: {exc}") from None
    cuts = [
        starts[tok.start[0] - 1] + tok.start[1]
        for i, tok in enumerate(toks)
        if tok.type == tokenize.NAME and tok.string == old and i + 1 < len(toks) and toks[i + 1].string == "."
    ]
    for off in reversed(cuts):
        text = text[:off] + new + text[off + len(old):]
    return text


def _rename_in(text: str) -> str:
    return _swap_names(text, "in", _IN)


def _dotted(node: ast.AST, root: str) -> str | None:
    parts = []
    while isinstance(node, ast.Attribute):
        parts.append(node.attr)
        node = node.value
    if isinstance(node, ast.Name) and node.id == root and parts:
        return ".".join(reversed(parts))
    return None


# --------------------------------------------------------------------------
# compiled expression tree


class Expr:
    """A compiled expression.

    ``refs`` is every attribute read, ``bare_refs()`` the ones read outside any
    aggregator call, and ``has_agg`` tells whether the tree contains one.
    """

    refs: frozenset = frozenset()
    has_agg: bool = False

    def eval(self, row):  # pragma: no cover - abstract
        raise NotImplementedError

    def eval_group(self, rows):
        # Outside an aggregator, a group expression reads the first row; the
        # validator restricts such reads to key attributes.
        return self.eval(rows[0])

    def bare_refs(self) -> frozenset:
        return self.refs

    def is_identity_of(self, name: str) -> bool:
        return False


@dataclass(eq=False)
class Const(Expr):
    value: Any

    def eval(self, row):
        return self.value


@dataclass(eq=False)
class Ref(Expr):
    name: str

    def __post_init__(self):
        self.refs = frozenset([self.name])

    def eval(self, row):
        try:
            return row[self.name]
        except KeyError:
            raise RowKeyError(self.name) from None

    def is_identity_of(self, name):
        return self.name == name


def _arith(op_name: str, fn: Callable) -> Callable:
    def apply(a, b):
        if a is None or b is None:
            raise ExprTypeError(f"null operand to {op_name}")
        if not (_is_number(a) and _is_number(b)):
            raise ExprTypeError(
                f"{op_name} needs numbers, got {type(a).__name__} and {type(b).__name__}"
            )
        try:
            return fn(a, b)
        except ZeroDivisionError:
            raise ExprTypeError("division by zero") from None

    return apply


_BINOPS = {
    ast.Add: _arith("+", operator.add),
    ast.Sub: _arith("-", operator.sub),
    ast.Mult: _arith("*", operator.mul),
    ast.Div: _arith("/", operator.truediv),
    ast.Mod: _arith("%", operator.mod),
}


def _ordered(fn, sym):
    def apply(a, b):
        if _is_number(a) and _is_number(b) or (
            type(a) is type(b) and isinstance(a, (str, bool))
        ):
            return fn(a, b)
        raise ExprTypeError(f"cannot compare {type(a).__name__} {sym} {type(b).__name__}")

    return apply


_CMPOPS = {
    ast.Eq: lambda a, b: hashable(a) == hashable(b),
    ast.NotEq: lambda a, b: hashable(a) != hashable(b),
    ast.Lt: _ordered(operator.lt, "<"),
    ast.LtE: _ordered(operator.le, "<="),
    ast.Gt: _ordered(operator.gt, ">"),
    ast.GtE: _ordered(operator.ge, ">="),
}


class _Composite(Expr):
    """Shared plumbing for nodes with children."""

    children: tuple = ()

    def _init_children(self, *children):
        self.children = tuple(children)
        self.refs = frozenset().union(*(c.refs for c in children)) if children else frozenset()
        self.has_agg = any(c.has_agg for c in children)

    def bare_refs(self):
        return frozenset().union(*(c.bare_refs() for c in self.children)) if self.children else frozenset()

    def _vals(self, env, group):
        return [c.eval_group(env) if group else c.eval(env) for c in self.children]


class BinOp(_Composite):
    def __init__(self, fn, left, right):
        self.fn = fn
        self._init_children(left, right)

    def eval(self, row):
        return self.fn(*self._vals(row, False))

    def eval_group(self, rows):
        return self.fn(*self._vals(rows, True))


class Neg(_Composite):
    def __init__(self, operand):
        self._init_children(operand)

    def _apply(self, v):
        if not _is_number(v):
            raise ExprTypeError(f"cannot negate {type(v).__name__}")
        return -v

    def eval(self, row):
        return self._apply(self.children[0].eval(row))

    def eval_group(self, rows):
        return self._apply(self.children[0].eval_group(rows))


def _truth(v):
    if not isinstance(v, bool):
        raise ExprTypeError(f"expected a boolean, got {type(v).__name__}")
    return v


class Not(_Composite):
    def __init__(self, operand):
        self._init_children(operand)

    def eval(self, row):
        return not _truth(self.children[0].eval(row))

    def eval_group(self, rows):
        return not _truth(self.children[0].eval_group(rows))


class BoolOp(_Composite):
    def __init__(self, is_and, values):
        self.is_and = is_and
        self._init_children(*values)

    def _run(self, ev):
        for c in self.children:
            v = _truth(ev(c))
            if self.is_and and not v:
                return False
            if not self.is_and and v:
                return True
        return self.is_and

    def eval(self, row):
        return self._run(lambda c: c.eval(row))

    def eval_group(self, rows):
        return self._run(lambda c: c.eval_group(rows))


class Compare(_Composite):
    def __init__(self, ops, operands):
        self.ops = ops
        self._init_children(*operands)

    def _run(self, vals):
        for fn, a, b in zip(self.ops, vals, vals[1:]):
            if not fn(a, b):
                return False
        return True

    def eval(self, row):
        return self._run(self._vals(row, False))

    def eval_group(self, rows):
        return self._run(self._vals(rows, True))


class IfElse(_Composite):
    def __init__(self, test, body, orelse):
        self._init_children(test, body, orelse)

    def eval(self, row):
        t, b, o = self.children
        return b.eval(row) if _truth(t.eval(row)) else o.eval(row)

    def eval_group(self, rows):
        t, b, o = self.children
        return b.eval_group(rows) if _truth(t.eval_group(rows)) else o.eval_group(rows)


class ListExpr(_Composite):
    def __init__(self, items):
        self._init_children(*items)

    def eval(self, row):
        return self._vals(row, False)

    def eval_group(self, rows):
        return self._vals(rows, True)


def _startswith(s, prefix):
    if not (isinstance(s, str) and isinstance(prefix, str)):
        raise ExprTypeError("startswith needs two strings")
    return s.startswith(prefix)


def _concat(*parts):
    if all(isinstance(p, str) for p in parts):
        return "".join(parts)
    if all(isinstance(p, list) for p in parts):
        return [x for p in parts for x in p]
    raise ExprTypeError("concat needs all strings or all lists")


def _length(v):
    if isinstance(v, (str, list)):
        return len(v)
    raise ExprTypeError(f"length of {type(v).__name__}")


_SCALARS = {"startswith": (_startswith, 2), "concat": (_concat, None), "length": (_length, 1)}


class Call(_Composite):
    def __init__(self, name, args):
        self.name = name
        self.fn, arity = _SCALARS[name]
        if arity is not None and len(args) != arity:
            raise ExprSyntaxError(f"{name} takes {arity} argument(s)")
        self._init_children(*args)

    def eval(self, row):
        return self.fn(*self._vals(row, False))

    def eval_group(self, rows):
        return self.fn(*self._vals(rows, True))


def fold(name: str, values: Sequence):
    """Apply aggregator ``name`` to a sequence of values. Nulls are skipped."""
    vals = [v for v in values if v is not None]
    if name == "count":
        return len(vals)
    if name == "collect":
        return sorted(vals, key=canonical_key)
    if name == "sum":
        if not all(_is_number(v) for v in vals):
            raise ExprTypeError("sum over non-numeric values")
        if any(isinstance(v, float) for v in vals):
            return math.fsum(vals)
        return sum(vals)
    if not vals:
        raise ExprTypeError(f"{name} of an empty collection")
    if name == "mean":
        if not all(_is_number(v) for v in vals):
            raise ExprTypeError("mean over non-numeric values")
        return math.fsum(vals) / len(vals)
    try:
        return min(vals, key=canonical_key) if name == "min" else max(vals, key=canonical_key)
    except ExprTypeError:
        raise
    except TypeError as exc:  # pragma: no cover - canonical_key is total
        raise ExprTypeError(str(exc)) from None


class Aggregate(Expr):
    def __init__(self, name, arg: Expr | None):
        self.name = name
        self.arg = arg
        self.refs = arg.refs if arg is not None else frozenset()
        self.has_agg = True

    def bare_refs(self):
        return frozenset()

    def eval(self, row):
        if self.arg is None:
            raise ExprTypeError(f"{self.name}() needs an argument outside a group")
        v = self.arg.eval(row)
        if not isinstance(v, list):
            raise ExprTypeError(f"{self.name} over a non-list value")
        return fold(self.name, v)

    def eval_group(self, rows):
        if self.arg is None:
            return len(rows)
        return fold(self.name, [self.arg.eval(r) for r in rows])


# --------------------------------------------------------------------------
# AST -> Expr


def _build(node: ast.AST, in_agg=False) -> Expr:
    if isinstance(node, ast.Constant):
        if node.value is not None and not isinstance(node.value, (bool, int, float, str)):
            raise ExprSyntaxError(f"unsupported literal {node.value!r}")
        return Const(node.value)
    if isinstance(node, ast.Name):
        lit = {"true": True, "false": False, "null": None, "True": True, "False": False, "None": None}
        if node.id in lit:
            return Const(lit[node.id])
        raise ExprSyntaxError(f"bare name {node.id!r}; attributes are written in.<name>")
    if isinstance(node, ast.Attribute):
        name = _dotted(node, _IN)
        if name is None:
            raise ExprSyntaxError("attribute references must start with 'in.'")
        return Ref(name)
    if isinstance(node, ast.BinOp):
        fn = _BINOPS.get(type(node.op))
        if fn is None:
            raise ExprSyntaxError(f"unsupported operator {type(node.op).__name__}")
        return BinOp(fn, _build(node.left, in_agg), _build(node.right, in_agg))
    if isinstance(node, ast.UnaryOp):
        if isinstance(node.op, ast.USub):
            operand = node.operand
            if isinstance(operand, ast.Constant) and _is_number(operand.value):
                return Const(-operand.value)
            return Neg(_build(operand, in_agg))
        if isinstance(node.op, ast.Not):
            return Not(_build(node.operand, in_agg))
        raise ExprSyntaxError(f"unsupported unary operator {type(node.op).__name__}")
    if isinstance(node, ast.BoolOp):
        return BoolOp(isinstance(node.op, ast.And), [_build(v, in_agg) for v in node.values])
    if isinstance(node, ast.Compare):
        ops = []
        for op in node.ops:
            fn = _CMPOPS.get(type(op))
            if fn is None:
                raise ExprSyntaxError(f"unsupported comparison {type(op).__name__}")
            ops.append(fn)
        return Compare(ops, [_build(node.left, in_agg)] + [_build(c, in_agg) for c in node.comparators])
    if isinstance(node, ast.IfExp):
        return IfElse(_build(node.test, in_agg), _build(node.body, in_agg), _build(node.orelse, in_agg))
    if isinstance(node, ast.List):
        return ListExpr([_build(e, in_agg) for e in node.elts])
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.keywords:
            raise ExprSyntaxError("only plain function calls are supported")
        fname = node.func.id
        if fname in AGGREGATORS:
            if in_agg:
                raise ExprSyntaxError("nested aggregators are not supported")
            if len(node.args) > 1 or (not node.args and fname != "count"):
                raise ExprSyntaxError(f"{fname} takes one argument")
            arg = _build(node.args[0], True) if node.args else None
            return Aggregate(fname, arg)
        if fname in _SCALARS:
            return Call(fname, [_build(a, in_agg) for a in node.args])
        raise ExprSyntaxError(f"unknown function {fname!r}")
    raise ExprSyntaxError(f"unsupported syntax {type(node).__name__}")


def parse_expr(text: str) -> Expr:
    """Parse a single expression such as a filter predicate."""
    try:
        tree = ast.parse(_rename_in(text).strip(), mode="eval")
    except SyntaxError as exc:
        raise ExprSyntaxError(f"cannot parse {text!r}: {exc.msg}") from None
    return _build(tree.body)


@dataclass(eq=False)
class Assignment:
    target: str
    expr: Expr

    @property
    def is_identity(self) -> bool:
        return self.expr.is_identity_of(self.target)


def parse_assignments(text: str) -> list[Assignment]:
    """Parse ``out.x = ...; out.y = ...`` into ordered assignments (blank text gives none)."""
    if not text.strip():
        return []
    try:
        tree = ast.parse(_rename_in(text).strip())
    except SyntaxError as exc:
        raise ExprSyntaxError(f"cannot parse {text!r}: {exc.msg}") from None
    result = []
    seen = set()
    for stmt in tree.body:
        if not isinstance(stmt, ast.Assign) or len(stmt.targets) != 1:
            raise ExprSyntaxError(f"expected 'out.<attr> = <expr>' statements in {text!r}")
        name = _dotted(stmt.targets[0], _OUT)
        if name is None:
            raise ExprSyntaxError("assignment targets must be out.<attr>")
        if name in seen:
            raise SchemaError(f"attribute {name!r} assigned twice")
        seen.add(name)
        result.append(Assignment(name, _build(stmt.value)))
    return result


def _restore_in(text: str) -> str:
    return _swap_names(text, _IN, "in").strip()


def split_assignments(text: str) -> list[tuple[str, str]]:
    """``(target, source text)`` per statement, so callers can drop some and re-join."""
    if not text.strip():
        return []
    renamed = _rename_in(text).strip()
    try:
        tree = ast.parse(renamed)
    except SyntaxError as exc:
        raise ExprSyntaxError(f"cannot parse {text!r}: {exc.msg}") from None
    out = []
    for stmt in tree.body:
        if not isinstance(stmt, ast.Assign) or len(stmt.targets) != 1:
            raise ExprSyntaxError(f"expected 'out.<attr> = <expr>' statements in {text!r}")
        out.append((_dotted(stmt.targets[0], _OUT), _restore_in(ast.get_source_segment(renamed, stmt))))
    return out


def join_assignments(parts: Sequence[str]) -> str:
    return "; ".join(parts)

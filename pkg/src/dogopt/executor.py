"""Reference multiset executor for plans.

Rows are dicts keyed by attribute name. Nothing here is tuned for speed; the
point is exact, deterministic semantics that rewrites can be checked against.
"""
from __future__ import annotations

import csv
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

from .errors import ExprTypeError, PlanError, RowKeyError, SchemaMismatch
from .expr import Aggregate, canonical_key, fold, hashable
from .plan import OpNode, Plan, topo_order


@dataclass
class Dataset:
    schema: tuple
    rows: list = field(default_factory=list)

    def __post_init__(self):
        self.schema = tuple(self.schema)
        for r in self.rows:
            if set(r) != set(self.schema):
                raise SchemaMismatch(f"row {r} does not match schema {self.schema}")

    def __len__(self):
        return len(self.rows)

    def counter(self) -> Counter:
        return Counter(row_key(r, self.schema) for r in self.rows)

    def sorted_rows(self) -> list[dict]:
        return sorted(self.rows, key=lambda r: tuple(canonical_key(r[a]) for a in sorted(self.schema)))

    @classmethod
    def of(cls, schema, rows: Iterable[Mapping]) -> "Dataset":
        """Project ``rows`` onto ``schema``; extra attributes are dropped."""
        schema = tuple(schema)
        out = []
        for r in rows:
            try:
                out.append({a: r[a] for a in schema})
            except KeyError as exc:
                raise RowKeyError(exc.args[0]) from None
        return cls(schema, out)


def row_key(row: Mapping, schema: Iterable[str]) -> tuple:
    return tuple((a, hashable(row[a])) for a in sorted(schema))


# --------------------------------------------------------------------------
# operators


def _apply_assignments(node: OpNode, row: dict) -> dict:
    return {a.target: a.expr.eval(row) for a in node.assignments()}


def eval_map(node: OpNode, data: Dataset) -> Dataset:
    if node.udf.expr is None:
        raise PlanError(f"node {node.id}: an opaque Map cannot be executed")
    out = []
    for row in data.rows:
        new = _apply_assignments(node, row)
        if node.flatten is None:
            out.append(new)
            continue
        items = new[node.flatten]
        if not isinstance(items, list):
            raise ExprTypeError(f"node {node.id}: flatten attribute {node.flatten!r} is not a list")
        for x in items:
            out.append({**new, node.flatten: x})
    return Dataset(node.out_schema, out)


def eval_filter(node: OpNode, data: Dataset) -> Dataset:
    pred = node.predicate()
    keep = []
    for row in data.rows:
        v = pred.eval(row)
        if not isinstance(v, bool):
            raise ExprTypeError(f"node {node.id}: predicate returned {type(v).__name__}")
        if v:
            keep.append(row)
    return Dataset(data.schema, keep)


def _post_map(node: OpNode, schema, rows) -> Dataset:
    if node.udf.expr is None:
        return Dataset(node.out_schema or schema, rows)
    return Dataset(node.out_schema, [_apply_assignments(node, r) for r in rows])


def eval_set(node: OpNode, left: Dataset, right: Dataset) -> Dataset:
    if set(left.schema) != set(right.schema):
        raise SchemaMismatch(f"node {node.id}: Set inputs differ")
    if node.op == "union":
        rows = list(left.rows) + list(right.rows)
    else:
        rc = right.counter()
        taken: Counter = Counter()
        rows = []
        for r in left.rows:
            k = row_key(r, left.schema)
            if taken[k] < rc[k]:
                taken[k] += 1
                rows.append(r)
    return _post_map(node, left.schema, rows)


def eval_join(node: OpNode, left: Dataset, right: Dataset) -> Dataset:
    key = node.key
    rest_r = [a for a in right.schema if a not in key]
    rest_l = [a for a in left.schema if a not in key]
    index = defaultdict(list)
    for r in right.rows:
        index[tuple(hashable(r[k]) for k in key)].append(r)
    rows, matched = [], set()
    for l in left.rows:
        k = tuple(hashable(l[a]) for a in key)
        hits = index.get(k, [])
        if hits:
            matched.add(k)
            rows.extend({**l, **{a: r[a] for a in rest_r}} for r in hits)
        elif node.how in ("left", "full"):
            rows.append({**l, **{a: None for a in rest_r}})
    if node.how in ("right", "full"):
        for k, rs in index.items():
            if k in matched:
                continue
            for r in rs:
                rows.append({**{a: None for a in rest_l}, **r})
    schema = tuple(left.schema) + tuple(rest_r)
    rows = [{a: r[a] for a in schema} for r in rows]
    return _post_map(node, schema, rows)


def eval_group(node: OpNode, data: Dataset) -> Dataset:
    groups: dict[tuple, list] = {}
    for r in data.rows:
        groups.setdefault(tuple(hashable(r[k]) for k in node.key), []).append(r)
    out = []
    assigns = node.assignments() or []
    for k in sorted(groups, key=canonical_key):
        rows = groups[k]
        new = {a: rows[0][a] for a in node.key}
        for a in assigns:
            new[a.target] = a.expr.eval_group(rows)
        out.append(new)
    return Dataset(node.out_schema, out)


def eval_agg(node: OpNode, data: Dataset) -> Any:
    """Fold the whole input into one value, seeded by ``init``."""
    (assign,) = node.assignments()
    expr, init = assign.expr, node.init
    if not isinstance(expr, Aggregate):
        if not data.rows:
            raise ExprTypeError(f"node {node.id}: aggregate expression over empty input")
        return expr.eval_group(data.rows)
    values = [1] * len(data.rows) if expr.arg is None else [expr.arg.eval(r) for r in data.rows]
    name = expr.name
    if init is None:
        return len(data.rows) if expr.arg is None else fold(name, values)
    if name in ("sum", "count"):
        return fold("sum", [init, fold(name, values)])
    if name in ("min", "max"):
        return fold(name, [init] + values)
    if name == "mean":
        live = [v for v in values if v is not None]
        return init if not live else fold("mean", live)
    if name == "collect":
        extra = init if isinstance(init, list) else [init]
        return fold("collect", extra + values)
    raise ExprTypeError(f"unknown aggregator {name}")  # pragma: no cover


# --------------------------------------------------------------------------
# whole plans


def run_plan(plan: Plan, inputs: Mapping[str, Any]) -> dict[str, Dataset]:
    """Evaluate ``plan`` on named input datasets; returns the declared outputs.

    Inputs may be :class:`Dataset` objects or plain lists of row dicts; rows
    are projected onto the plan's declared dataset schema. Agg results come
    back as one-row datasets.
    """
    env: dict[str, Dataset] = {}
    for name, schema in plan.datasets.items():
        if name not in inputs:
            raise PlanError(f"no input supplied for dataset {name!r}")
        src = inputs[name]
        rows = src.rows if isinstance(src, Dataset) else src
        env[name] = Dataset.of(schema, rows)
    by_id = plan.by_id
    for ident in topo_order(plan):
        node = by_id[ident]
        args = [env[i] for i in node.inputs]
        kind = node.kind
        if kind == "Map":
            env[ident] = eval_map(node, *args)
        elif kind == "Filter":
            env[ident] = eval_filter(node, *args)
        elif kind == "Set":
            env[ident] = eval_set(node, *args)
        elif kind == "Join":
            env[ident] = eval_join(node, *args)
        elif kind == "Group":
            env[ident] = eval_group(node, *args)
        elif kind == "Agg":
            value = eval_agg(node, *args)
            env[ident] = Dataset(node.out_schema, [{node.out_schema[0]: value}])
        else:  # pragma: no cover - rejected by validation
            raise PlanError(f"cannot execute {kind}")
    return {name: Dataset(env[n].schema, env[n].sorted_rows()) for name, n in sorted(plan.outputs.items())}


@dataclass
class Equivalence:
    equal: bool
    output: str | None = None
    row: dict | None = None
    count_a: int = 0
    count_b: int = 0

    def __bool__(self):
        return self.equal


def compare_outputs(a: Mapping[str, Dataset], b: Mapping[str, Dataset]) -> Equivalence:
    if set(a) != set(b):
        raise SchemaMismatch(f"outputs differ: {sorted(a)} vs {sorted(b)}")
    for name in sorted(a):
        da, db = a[name], b[name]
        if set(da.schema) != set(db.schema):
            raise SchemaMismatch(f"output {name}: schemas {da.schema} vs {db.schema}")
        ca, cb = da.counter(), db.counter()
        if ca != cb:
            diff = sorted((ca - cb) + (cb - ca), key=lambda k: canonical_key([list(p) for p in k]))
            k = diff[0]
            return Equivalence(False, name, {a_: v for a_, v in k}, ca[k], cb[k])
    return Equivalence(True)


def equivalent(plan_a: Plan, plan_b: Plan, inputs: Mapping[str, Any]) -> Equivalence:
    """Multiset equality of every declared output; the first differing row is the witness."""
    if set(plan_a.outputs) != set(plan_b.outputs):
        raise SchemaMismatch("plans declare different outputs")
    return compare_outputs(run_plan(plan_a, inputs), run_plan(plan_b, inputs))


# --------------------------------------------------------------------------
# files


def _flatten(obj: Mapping, prefix="") -> dict:
    out = {}
    for k, v in obj.items():
        name = f"{prefix}{k}"
        if isinstance(v, Mapping):
            out.update(_flatten(v, name + "."))
        else:
            out[name] = v
    return out


def _cell(text: str):
    if text == "":
        return None
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_dataset(path, schema=None) -> Dataset:
    """Read NDJSON (``.jsonl``/``.ndjson``) or CSV with a header, by extension."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in (".jsonl", ".ndjson"):
        rows = [_flatten(json.loads(line)) for line in path.read_text().splitlines() if line.strip()]
    elif suffix == ".csv":
        with path.open(newline="") as fh:
            rows = [{k: _cell(v) for k, v in r.items()} for r in csv.DictReader(fh)]
    else:
        raise PlanError(f"unknown dataset format {suffix!r}")
    if schema is None:
        schema = list(dict.fromkeys(a for r in rows for a in r))
    return Dataset.of(schema, rows)


def save_dataset(data: Dataset, path) -> None:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in (".jsonl", ".ndjson"):
        path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in data.sorted_rows()))
    elif suffix == ".csv":
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(data.schema))
            w.writeheader()
            for r in data.sorted_rows():
                w.writerow({k: "" if v is None else json.dumps(v) if not isinstance(v, str) else v for k, v in r.items()})
    else:
        raise PlanError(f"unknown dataset format {suffix!r}")

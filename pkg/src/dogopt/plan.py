"""Plan documents: the user-authored operator graph and its JSON form.

A plan names its input datasets and lists operator nodes. Node inputs refer
either to other nodes or to datasets; datasets hang off the implicit Source
node when the graph is built (see :mod:`dogopt.dog`).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import lru_cache
from graphlib import CycleError as _GraphCycle
from graphlib import TopologicalSorter
from pathlib import Path
from typing import Any, Mapping

from .errors import (
    ArityError,
    CycleError,
    PlanError,
    SchemaError,
    UnknownAttribute,
    UnknownReference,
)
from .expr import Assignment, Expr, parse_assignments, parse_expr

KINDS = ("Source", "Map", "Filter", "Set", "Join", "Group", "Agg", "Sink")
SHUFFLE_KINDS = frozenset({"Set", "Join", "Group", "Agg"})
ARITY = {"Source": 0, "Map": 1, "Filter": 1, "Group": 1, "Agg": 1, "Set": 2, "Join": 2}
JOIN_HOW = ("inner", "left", "right", "full")
SET_OPS = ("union", "intersection")

_NODE_FIELDS = {"id", "kind", "inputs", "expr", "use", "def", "key", "init", "how", "op", "flatten", "out_schema"}
_PLAN_FIELDS = {"datasets", "nodes", "targets", "outputs", "source", "sink"}


@dataclass(frozen=True)
class UdfMeta:
    expr: str | None = None
    declared_use: frozenset | None = None
    declared_def: frozenset | None = None


@dataclass(frozen=True)
class OpNode:
    id: str
    kind: str
    inputs: tuple = ()
    udf: UdfMeta = UdfMeta()
    key: tuple = ()
    init: Any = None
    how: str = "inner"
    op: str = "union"
    flatten: str | None = None
    out_schema: tuple = ()

    @property
    def is_shuffle(self) -> bool:
        return self.kind in SHUFFLE_KINDS

    def predicate(self) -> Expr:
        """Compiled filter predicate."""
        return _compile_expr(self.udf.expr)

    def assignments(self) -> list[Assignment] | None:
        """Compiled ``out.x = ...`` list, or None for expression-less nodes."""
        if self.udf.expr is None or self.kind == "Filter":
            return None
        return _compile_assignments(self.udf.expr)


@lru_cache(maxsize=4096)
def _compile_expr(text):
    return parse_expr(text)


@lru_cache(maxsize=4096)
def _compile_assignments(text):
    return parse_assignments(text)


@dataclass(frozen=True)
class Plan:
    datasets: Mapping[str, tuple]
    nodes: tuple  # OpNode, in document order
    targets: Mapping[str, str] | None = None
    outputs: Mapping[str, str] = field(default_factory=dict)
    source: str = "source"
    sink: str = "sink"

    @property
    def by_id(self) -> dict[str, OpNode]:
        return {n.id: n for n in self.nodes}

    def node(self, ident: str) -> OpNode:
        try:
            return self.by_id[ident]
        except KeyError:
            raise UnknownReference(f"no node {ident!r}") from None

    def consumers(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {n.id: [] for n in self.nodes}
        for n in self.nodes:
            for i in dict.fromkeys(n.inputs):
                if i in out:
                    out[i].append(n.id)
        return out

    def input_schema(self, ref: str) -> tuple:
        if ref in self.datasets:
            return tuple(self.datasets[ref])
        return self.node(ref).out_schema


# --------------------------------------------------------------------------
# JSON <-> Plan


def _strs(value, what) -> tuple:
    if value is None:
        return ()
    if isinstance(value, str) or not all(isinstance(v, str) for v in value):
        raise PlanError(f"{what} must be a list of strings")
    return tuple(value)


def parse_plan(doc: Mapping | str) -> Plan:
    """Build a validated :class:`Plan` from a JSON text or an already-decoded dict."""
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise PlanError(f"plan is not valid JSON: {exc}") from None
    if not isinstance(doc, Mapping):
        raise PlanError("plan must be a JSON object")
    unknown = set(doc) - _PLAN_FIELDS
    if unknown:
        raise PlanError(f"unknown plan fields: {sorted(unknown)}")
    datasets = doc.get("datasets", {})
    if not isinstance(datasets, Mapping):
        raise PlanError("datasets must map names to attribute lists")
    datasets = {name: _strs(attrs, f"dataset {name}") for name, attrs in datasets.items()}
    nodes = []
    for raw in doc.get("nodes", []):
        if not isinstance(raw, Mapping):
            raise PlanError("each node must be an object")
        unknown = set(raw) - _NODE_FIELDS
        if unknown:
            raise PlanError(f"node {raw.get('id')!r}: unknown fields {sorted(unknown)}")
        if "id" not in raw or "kind" not in raw:
            raise PlanError("node needs 'id' and 'kind'")
        use = raw.get("use")
        dfn = raw.get("def")
        nodes.append(
            OpNode(
                id=str(raw["id"]),
                kind=raw["kind"],
                inputs=_strs(raw.get("inputs"), f"{raw['id']}.inputs"),
                udf=UdfMeta(
                    expr=raw.get("expr"),
                    declared_use=None if use is None else frozenset(_strs(use, "use")),
                    declared_def=None if dfn is None else frozenset(_strs(dfn, "def")),
                ),
                key=_strs(raw.get("key"), f"{raw['id']}.key"),
                init=raw.get("init"),
                how=raw.get("how", "inner"),
                op=raw.get("op", "union"),
                flatten=raw.get("flatten"),
                out_schema=_strs(raw.get("out_schema"), f"{raw['id']}.out_schema"),
            )
        )
    targets = doc.get("targets")
    if targets is not None:
        if not isinstance(targets, Mapping):
            raise PlanError("targets must map stage ids to node ids")
        targets = {str(k): str(v) for k, v in targets.items()}
    outputs = doc.get("outputs") or {}
    plan = Plan(
        datasets=datasets,
        nodes=tuple(nodes),
        targets=targets,
        outputs={str(k): str(v) for k, v in outputs.items()},
        source=str(doc.get("source", "source")),
        sink=str(doc.get("sink", "sink")),
    )
    return validate_plan(plan)


def load_plan(path) -> Plan:
    return parse_plan(Path(path).read_text())


def plan_to_dict(plan: Plan) -> dict:
    nodes = []
    for n in plan.nodes:
        d: dict[str, Any] = {"id": n.id, "kind": n.kind, "inputs": list(n.inputs)}
        if n.udf.expr is not None:
            d["expr"] = n.udf.expr
        if n.udf.declared_use is not None:
            d["use"] = sorted(n.udf.declared_use)
        if n.udf.declared_def is not None:
            d["def"] = sorted(n.udf.declared_def)
        if n.key:
            d["key"] = list(n.key)
        if n.kind == "Agg" and n.init is not None:
            d["init"] = n.init
        if n.kind == "Join" and n.how != "inner":
            d["how"] = n.how
        if n.kind == "Set" and n.op != "union":
            d["op"] = n.op
        if n.flatten is not None:
            d["flatten"] = n.flatten
        if n.udf.expr is None and n.kind == "Map":
            d["out_schema"] = list(n.out_schema)
        nodes.append(d)
    doc: dict[str, Any] = {
        "datasets": {k: list(v) for k, v in plan.datasets.items()},
        "nodes": nodes,
        "outputs": dict(plan.outputs),
        "source": plan.source,
        "sink": plan.sink,
    }
    if plan.targets is not None:
        doc["targets"] = dict(plan.targets)
    return doc


def dump_plan(plan: Plan) -> str:
    return json.dumps(plan_to_dict(plan), indent=2)


# --------------------------------------------------------------------------
# validation and schema inference


def topo_order(plan: Plan) -> list[str]:
    """Node ids in a topological order (ties broken by document order)."""
    ids = [n.id for n in plan.nodes]
    pos = {i: k for k, i in enumerate(ids)}
    ts = TopologicalSorter()
    for n in plan.nodes:
        ts.add(n.id, *[i for i in n.inputs if i in pos])
    try:
        ts.prepare()
    except _GraphCycle as exc:
        raise CycleError(f"plan contains a cycle through {exc.args[1]}") from None
    order = []
    while ts.is_active():
        ready = sorted(ts.get_ready(), key=pos.__getitem__)
        order.extend(ready)
        ts.done(*ready)
    return order


def _check_refs(refs, schema, where):
    for r in sorted(refs):
        if r not in schema:
            raise UnknownAttribute(r, where)


def _infer_schema(node: OpNode, ins: list[tuple]) -> tuple:
    where = f"node {node.id}"
    kind = node.kind
    if kind == "Filter":
        if node.udf.expr is None:
            raise PlanError(f"{where}: Filter needs a predicate")
        pred = node.predicate()
        if pred.has_agg:
            raise SchemaError(f"{where}: aggregators are not allowed in a filter")
        _check_refs(pred.refs, ins[0], where)
        return ins[0]

    if kind == "Set":
        if node.op not in SET_OPS:
            raise PlanError(f"{where}: unknown set op {node.op!r}")
        if set(ins[0]) != set(ins[1]):
            raise SchemaError(f"{where}: Set inputs have different attribute sets {ins[0]} vs {ins[1]}")
        base = ins[0]
    elif kind == "Join":
        if node.how not in JOIN_HOW:
            raise PlanError(f"{where}: unknown join type {node.how!r}")
        if not node.key:
            raise SchemaError(f"{where}: Join needs a non-empty key")
        for k in node.key:
            if k not in ins[0] or k not in ins[1]:
                raise SchemaError(f"{where}: join key {k!r} is not shared by both inputs")
        clash = (set(ins[0]) & set(ins[1])) - set(node.key)
        if clash:
            raise SchemaError(f"{where}: non-key attributes {sorted(clash)} appear on both sides")
        base = ins[0] + tuple(a for a in ins[1] if a not in node.key)
    else:
        base = ins[0] if ins else ()

    if kind == "Group":
        if not node.key:
            raise SchemaError(f"{where}: Group needs a non-empty key")
        _check_refs(node.key, base, where)

    if node.udf.expr is None:
        if kind in ("Group", "Agg"):
            raise PlanError(f"{where}: {kind} needs an aggregate expression")
        if kind == "Map":
            if not node.out_schema or node.udf.declared_use is None or node.udf.declared_def is None:
                raise PlanError(f"{where}: an opaque Map must declare out_schema, use and def")
            _check_refs(node.udf.declared_use, base, where)
            return node.out_schema
        return base

    assigns = node.assignments()
    targets = tuple(a.target for a in assigns)
    for a in assigns:
        _check_refs(a.expr.refs, base, where)
        if kind in ("Group", "Agg"):
            allowed = set(node.key)
            stray = a.expr.bare_refs() - allowed
            if stray:
                raise SchemaError(
                    f"{where}: {sorted(stray)} read outside an aggregator (only key attributes may be)"
                )
    if kind == "Group":
        dup = set(targets) & set(node.key)
        if dup:
            raise SchemaError(f"{where}: outputs {sorted(dup)} collide with the key")
        return tuple(node.key) + targets
    if kind == "Agg":
        if len(assigns) != 1 or not assigns[0].expr.has_agg:
            raise SchemaError(f"{where}: Agg takes exactly one aggregate assignment")
        return targets
    if kind == "Map" and node.flatten is not None and node.flatten not in targets:
        raise SchemaError(f"{where}: flatten attribute {node.flatten!r} is not an output")
    return targets


def validate_plan(plan: Plan) -> Plan:
    """Check structure and attach inferred ``out_schema`` to every node."""
    ids = [n.id for n in plan.nodes]
    if len(set(ids)) != len(ids):
        raise PlanError("duplicate node ids")
    reserved = {plan.source, plan.sink}
    if plan.source == plan.sink:
        raise PlanError("source and sink ids must differ")
    for name in plan.datasets:
        if name in ids:
            raise PlanError(f"dataset {name!r} shadows a node id")
    for n in plan.nodes:
        if n.id in reserved:
            raise PlanError(f"node id {n.id!r} is reserved for Source/Sink")
        if n.kind not in ARITY:
            raise PlanError(f"node {n.id}: unknown kind {n.kind!r}")
        if n.kind == "Source":
            raise ArityError(f"node {n.id}: Source is implicit and cannot be declared")
        if len(n.inputs) != ARITY[n.kind]:
            raise ArityError(f"node {n.id}: {n.kind} takes {ARITY[n.kind]} input(s), got {len(n.inputs)}")
        for i in n.inputs:
            if i not in plan.datasets and i not in ids:
                raise UnknownReference(f"node {n.id} reads unknown input {i!r}")
        if n.kind not in ("Join", "Group") and n.key:
            raise PlanError(f"node {n.id}: only Join and Group take a key")
        if n.flatten is not None and n.kind != "Map":
            raise PlanError(f"node {n.id}: only Map can flatten")

    order = topo_order(plan)
    by_id = {n.id: n for n in plan.nodes}
    schemas: dict[str, tuple] = {k: tuple(v) for k, v in plan.datasets.items()}
    for k, attrs in schemas.items():
        if len(set(attrs)) != len(attrs):
            raise SchemaError(f"dataset {k}: duplicate attribute names")
    for ident in order:
        node = by_id[ident]
        schema = _infer_schema(node, [schemas[i] for i in node.inputs])
        if len(set(schema)) != len(schema):
            raise SchemaError(f"node {ident}: duplicate output attributes")
        if node.out_schema and tuple(node.out_schema) != schema:
            raise SchemaError(f"node {ident}: declared out_schema {node.out_schema} != inferred {schema}")
        by_id[ident] = replace(node, out_schema=schema)
        schemas[ident] = schema

    consumers: dict[str, int] = {i: 0 for i in ids}
    for n in plan.nodes:
        for i in set(n.inputs):
            if i in consumers:
                consumers[i] += 1
    for n in plan.nodes:
        if n.kind == "Agg" and consumers[n.id]:
            raise PlanError(f"node {n.id}: Agg results go to Sink only")
    terminal = [i for i in ids if consumers[i] == 0]
    outputs = dict(plan.outputs) or {i: i for i in terminal}
    if sorted(outputs.values()) != sorted(terminal):
        raise PlanError(f"outputs {sorted(outputs.values())} must name exactly the terminal nodes {sorted(terminal)}")

    if plan.targets is not None:
        seen = {}
        for stage, target in plan.targets.items():
            if target not in ids:
                raise UnknownReference(f"stage {stage} targets unknown node {target!r}")
            if target in seen:
                raise PlanError(f"stages {seen[target]} and {stage} share target {target}")
            seen[target] = stage

    return replace(plan, nodes=tuple(by_id[i] for i in ids), outputs=outputs)

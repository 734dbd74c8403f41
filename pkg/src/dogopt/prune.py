"""Attribute-level dependency graph and dead-attribute pruning.

Each vertex is an attribute instance ``(producer, attribute)`` where the
producer is a dataset name or a node id. Data edges run from the attributes an
expression reads to the attribute it defines; control edges join same-named
instances that pass through unchanged.

Attributes that decide which rows exist (filter predicates, grouping and join
keys, the flattened attribute, every attribute compared by a set
intersection) are wired straight to the sink. Pass-through operators (Filter,
Set, expression-less Join) cannot drop an attribute on their own, so their
control edges also point back upstream: an output instance stays alive as
long as its input does, and the two inputs of a Set share fate.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, replace

from .errors import WouldBreakKey
from .expr import join_assignments, split_assignments
from .plan import Plan, topo_order, validate_plan

DATA = "data"
CONTROL = "control"
REASON = "no path to sink"


@dataclass(frozen=True)
class Ddg:
    nodes: tuple
    edges: frozenset  # (src, dst, kind)
    source: tuple
    sink: tuple

    __hash__ = None

    def succ(self) -> dict:
        out = defaultdict(list)
        for a, b, _ in self.edges:
            out[a].append(b)
        return out

    def pred(self) -> dict:
        out = defaultdict(list)
        for a, b, _ in self.edges:
            out[b].append(a)
        return out


def build_ddg(plan: Plan) -> Ddg:
    """Validate ``plan`` and wire its attribute dependencies."""
    plan = validate_plan(plan)
    src, snk = (plan.source, ""), (plan.sink, "")
    nodes = [src]
    edges = set()

    def add(a, b, kind):
        edges.add((a, b, kind))

    for name, attrs in plan.datasets.items():
        for a in attrs:
            nodes.append((name, a))
            add(src, (name, a), CONTROL)

    by_id = plan.by_id
    for ident in topo_order(plan):
        n = by_id[ident]
        ins = list(n.inputs)
        schemas = [plan.input_schema(i) for i in ins]
        outs = [(ident, a) for a in n.out_schema]
        nodes.extend(outs)

        def origin(attr):
            # instances of ``attr`` among the inputs (a Join sees each non-key attr once)
            return [(i, attr) for i, s in zip(ins, schemas) if attr in s]

        kind = n.kind
        if kind == "Map" and n.udf.expr is None:
            use = n.udf.declared_use or frozenset()
            for o in outs:
                for r in sorted(use):
                    for p in origin(r):
                        add(p, o, DATA)
                add(o, snk, CONTROL)  # opaque outputs are never pruned
            continue

        assigns = n.assignments()
        if kind in ("Filter", "Set") or (kind == "Join" and assigns is None):
            base = schemas[0] if kind != "Join" else tuple(schemas[0]) + tuple(a for a in schemas[1] if a not in n.key)
            mid = {a: origin(a) for a in base}
            for a, ps in mid.items():
                if assigns is None:
                    for p in ps:
                        add(p, (ident, a), CONTROL)
                        add((ident, a), p, CONTROL)
                if kind == "Set" and len(ps) == 2:
                    add(ps[0], ps[1], CONTROL)
                    add(ps[1], ps[0], CONTROL)
            if assigns is not None:
                for a in assigns:
                    for r in sorted(a.expr.refs):
                        for p in origin(r):
                            add(p, (ident, a.target), CONTROL if a.is_identity else DATA)
            roots = set()
            if kind == "Filter":
                roots = n.predicate().refs
            elif kind == "Set" and n.op == "intersection":
                roots = set(base)
            elif kind == "Join":
                roots = set(n.key)
            for r in sorted(roots):
                for p in origin(r):
                    add(p, snk, DATA)
        else:
            for a in assigns or []:
                for r in sorted(a.expr.refs):
                    for p in origin(r):
                        add(p, (ident, a.target), CONTROL if a.is_identity and kind == "Map" else DATA)
            for k in n.key:
                for p in origin(k):
                    add(p, snk, DATA)
                    if k in n.out_schema:
                        add(p, (ident, k), CONTROL)
                if k in n.out_schema:
                    add((ident, k), snk, DATA)  # the grouped output always carries its key
            if n.flatten is not None:
                add((ident, n.flatten), snk, DATA)

    for name, ident in plan.outputs.items():
        for a in by_id[ident].out_schema:
            add((ident, a), snk, CONTROL)
    nodes.append(snk)
    return Ddg(tuple(nodes), frozenset(edges), src, snk)


@dataclass(frozen=True)
class PruneItem:
    op: str
    attribute: str
    reason: str = REASON

    def to_dict(self) -> dict:
        return {"op": self.op, "attribute": self.attribute, "reason": self.reason}


@dataclass(frozen=True)
class PruneReport:
    prunable: tuple

    def __len__(self):
        return len(self.prunable)

    def __iter__(self):
        return iter(self.prunable)

    def pairs(self) -> set:
        return {(p.op, p.attribute) for p in self.prunable}

    def to_list(self) -> list[dict]:
        return [p.to_dict() for p in self.prunable]


def live_set(ddg: Ddg) -> set:
    """Vertices with a path to the sink."""
    pred = ddg.pred()
    seen = {ddg.sink}
    stack = [ddg.sink]
    while stack:
        for p in pred[stack.pop()]:
            if p not in seen:
                seen.add(p)
                stack.append(p)
    return seen


def prune_report(ddg: Ddg) -> PruneReport:
    live = live_set(ddg)
    items = [
        PruneItem(op, attr)
        for op, attr in ddg.nodes
        if (op, attr) not in live and (op, attr) not in (ddg.source, ddg.sink)
    ]
    return PruneReport(tuple(items))


def analyze(plan: Plan) -> PruneReport:
    return prune_report(build_ddg(plan))


def apply_pruning(plan: Plan, report: PruneReport) -> Plan:
    """Drop reported attributes from dataset schemas and UDF outputs, then revalidate."""
    flagged = report.pairs()
    if not flagged:
        return plan
    by_id = plan.by_id
    for op, attr in sorted(flagged):
        users = [n for n in plan.nodes if op in n.inputs]
        owner = by_id.get(op)
        if owner is not None and (attr in owner.key or owner.flatten == attr):
            raise WouldBreakKey(f"{attr!r} is a key or flatten attribute of {op}")
        for u in users:
            if u.kind in ("Group", "Join") and attr in u.key:
                raise WouldBreakKey(f"{attr!r} is a key of {u.id}")
    datasets = {
        name: tuple(a for a in attrs if (name, a) not in flagged) for name, attrs in plan.datasets.items()
    }
    nodes = []
    for n in plan.nodes:
        if n.kind == "Map" and n.udf.expr is None:
            nodes.append(n)
            continue
        udf = n.udf
        if udf.expr is not None and n.kind != "Filter":
            parts = split_assignments(udf.expr)
            kept = [text for target, text in parts if (n.id, target) not in flagged]
            if len(kept) != len(parts):
                # declared sets described the old expression
                udf = replace(udf, expr=join_assignments(kept), declared_use=None, declared_def=None)
        nodes.append(replace(n, udf=udf, out_schema=()))
    return validate_plan(replace(plan, datasets=datasets, nodes=tuple(nodes)))

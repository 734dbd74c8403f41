"""Data Operational Graph: operators plus dummy Source/Sink, stages and paths."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from functools import cached_property
from graphlib import CycleError as _GraphCycle
from graphlib import TopologicalSorter
from typing import Iterable, Mapping, Sequence

from .errors import CycleError, MissingTarget, OrderViolation, PathExplosion, PlanError
from .plan import OpNode, Plan, parse_plan

log = logging.getLogger(__name__)

DEFAULT_MAX_PATHS = 100_000


def resolve_max_paths(value: int | None = None) -> int:
    """Explicit value, else ``DOGOPT_MAX_PATHS``, else the built-in default."""
    if value is not None:
        return int(value)
    env = os.environ.get("DOGOPT_MAX_PATHS")
    return int(env) if env else DEFAULT_MAX_PATHS


@dataclass(frozen=True)
class Dog:
    nodes: Mapping[str, OpNode]  # source first, sink last
    edges: frozenset
    source: str
    sink: str
    targets: Mapping[str, str] = field(default_factory=dict)  # stage id -> node id

    __hash__ = None  # mappings inside

    @cached_property
    def order(self) -> list[str]:
        return list(self.nodes)

    @cached_property
    def index(self) -> dict[str, int]:
        return {v: k for k, v in enumerate(self.order)}

    @cached_property
    def succ(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {v: [] for v in self.order}
        for a, b in self.edges:
            out[a].append(b)
        for lst in out.values():
            lst.sort(key=self.index.__getitem__)
        return out

    @cached_property
    def pred(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {v: [] for v in self.order}
        for a, b in self.edges:
            out[b].append(a)
        for lst in out.values():
            lst.sort(key=self.index.__getitem__)
        return out

    @cached_property
    def topo(self) -> list[str]:
        ts = TopologicalSorter({v: self.pred[v] for v in self.order})
        ts.prepare()
        order = []
        while ts.is_active():
            ready = sorted(ts.get_ready(), key=self.index.__getitem__)
            order.extend(ready)
            ts.done(*ready)
        return order

    @property
    def operators(self) -> list[str]:
        """Node ids excluding the dummy Source and Sink."""
        return [v for v in self.order if v not in (self.source, self.sink)]

    def ancestors(self, v: str) -> set[str]:
        seen = set()
        stack = [v]
        while stack:
            for p in self.pred[stack.pop()]:
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        return seen

    def sink_feeders(self) -> list[str]:
        return list(self.pred[self.sink])


def _check_dag(order: Sequence[str], edges: Iterable[tuple[str, str]]):
    ts = TopologicalSorter({v: [] for v in order})
    for a, b in edges:
        ts.add(b, a)
    try:
        ts.prepare()
    except _GraphCycle as exc:
        raise CycleError(f"graph contains a cycle through {exc.args[1]}") from None


def infer_targets(dog_or_nodes: Dog) -> dict[str, str]:
    """Fallback stage targets: every shuffle node and every Sink predecessor."""
    dog = dog_or_nodes
    chosen = [
        v
        for v in dog.topo
        if v not in (dog.source, dog.sink) and (dog.nodes[v].is_shuffle or dog.sink in dog.succ[v])
    ]
    return {f"s{k}": v for k, v in enumerate(chosen)}


def build_dog(plan: Plan | Mapping | str) -> Dog:
    """Build the operator graph for a plan, wiring Source and Sink."""
    if not isinstance(plan, Plan):
        plan = parse_plan(plan)
    ids = [n.id for n in plan.nodes]
    edges = set()
    for n in plan.nodes:
        for i in n.inputs:
            edges.add((plan.source if i in plan.datasets else i, n.id))
    has_consumer = {a for a, _ in edges}
    for i in ids:
        if i not in has_consumer:
            edges.add((i, plan.sink))
    nodes: dict[str, OpNode] = {plan.source: OpNode(plan.source, "Source")}
    nodes.update((n.id, n) for n in plan.nodes)
    nodes[plan.sink] = OpNode(plan.sink, "Sink", inputs=tuple(i for i in ids if i not in has_consumer))
    _check_dag(list(nodes), edges)
    dog = Dog(nodes=nodes, edges=frozenset(edges), source=plan.source, sink=plan.sink)
    targets = dict(plan.targets) if plan.targets is not None else infer_targets(dog)
    return Dog(nodes=nodes, edges=dog.edges, source=plan.source, sink=plan.sink, targets=targets)


def dog_from_edges(
    edges: Iterable[tuple[str, str]],
    targets: Mapping[str, str] | None = None,
    source: str = "source",
    sink: str = "sink",
    kinds: Mapping[str, str] | None = None,
) -> Dog:
    """Graph-only constructor for synthetic workloads (no schemas, no UDFs).

    Nodes without predecessors are fed by Source and nodes without successors
    feed Sink, mirroring :func:`build_dog`.
    """
    edges = {(a, b) for a, b in edges}
    names = []
    for a, b in sorted(edges):
        for v in (a, b):
            if v not in names and v not in (source, sink):
                names.append(v)
    if kinds:
        for v in kinds:
            if v not in names:
                names.append(v)
    names.sort(key=lambda s: (len(s), s))
    has_pred = {b for _, b in edges}
    has_succ = {a for a, _ in edges}
    for v in names:
        if v not in has_pred:
            edges.add((source, v))
        if v not in has_succ:
            edges.add((v, sink))
    kinds = dict(kinds or {})
    nodes = {source: OpNode(source, "Source")}
    for v in names:
        nodes[v] = OpNode(v, kinds.get(v, "Map"))
    nodes[sink] = OpNode(sink, "Sink")
    _check_dag(list(nodes), edges)
    dog = Dog(nodes=nodes, edges=frozenset(edges), source=source, sink=sink)
    if targets is None:
        targets = infer_targets(dog)
    return Dog(nodes=nodes, edges=dog.edges, source=source, sink=sink, targets=dict(targets))


# --------------------------------------------------------------------------
# paths


def count_paths(dog: Dog, start: str, end: str) -> int:
    """Number of directed paths from ``start`` to ``end`` (1 when equal)."""
    counts = {end: 1}
    for v in reversed(dog.topo):
        if v == end:
            continue
        counts[v] = sum(counts.get(s, 0) for s in dog.succ[v])
    return counts.get(start, 0)


def paths(dog: Dog, start: str, end: str, max_paths: int | None = None) -> list[tuple[str, ...]]:
    """All directed paths from ``start`` to ``end``, endpoints included.

    ``paths(dog, v, v) == [(v,)]``; unreachable pairs give ``[]``. Raises
    :class:`PathExplosion` when the count exceeds ``max_paths``.
    """
    for v in (start, end):
        if v not in dog.nodes:
            raise PlanError(f"unknown node {v!r}")
    cap = resolve_max_paths(max_paths)
    n = count_paths(dog, start, end)
    if n > cap:
        raise PathExplosion(n, cap)
    if start == end:
        return [(start,)]
    reach = dog.ancestors(end) | {end}
    out = []
    stack = [(start, (start,))]
    while stack:
        v, prefix = stack.pop()
        for s in reversed(dog.succ[v]):
            if s == end:
                out.append(prefix + (s,))
            elif s in reach:
                stack.append((s, prefix + (s,)))
    out.sort(key=lambda p: [dog.index[v] for v in p])
    return out


def paths_into(dog: Dog, end: str, members: Iterable[str], max_paths: int | None = None):
    """Map each member ``v`` to the paths ``v -> end``; the cap applies to the total."""
    cap = resolve_max_paths(max_paths)
    members = sorted(members, key=dog.index.__getitem__)
    total = sum(count_paths(dog, v, end) for v in members)
    if total > cap:
        raise PathExplosion(total, cap)
    return {v: paths(dog, v, end, max_paths=cap) for v in members}


# --------------------------------------------------------------------------
# stages


@dataclass(frozen=True)
class Stage:
    id: str
    target: str
    members: frozenset
    sched_order: int
    pred: str | None = None


def stage_members(dog: Dog, target: str) -> frozenset:
    """Nodes on any Source -> target path."""
    return frozenset(dog.ancestors(target) | {target})


def order_stages(dog: Dog, submit_ms: Mapping[str, float]) -> list[Stage]:
    """Order the graph's stages by submission time and check data dependencies.

    ``submit_ms`` maps stage id to submission time. Ties fall back to stage id
    order and are logged.
    """
    targets = dict(dog.targets)
    required = [
        v for v in dog.operators if dog.nodes[v].is_shuffle or dog.sink in dog.succ[v]
    ]
    covered = set(targets.values())
    missing = [v for v in required if v not in covered]
    if missing:
        raise MissingTarget(f"nodes {missing} end a stage but are not stage targets")
    for sid in targets:
        if sid not in submit_ms:
            raise MissingTarget(f"no submit time for stage {sid}")
    times = [submit_ms[s] for s in targets]
    if len(set(times)) != len(times):
        log.warning("equal stage submit times; ties broken by stage id")
    ids = sorted(targets, key=lambda s: (submit_ms[s], s))
    members = {s: stage_members(dog, targets[s]) for s in ids}
    rank = {s: k for k, s in enumerate(ids)}
    for a in ids:
        for b in ids:
            if a != b and targets[b] in members[a] and rank[b] > rank[a]:
                raise OrderViolation(
                    f"stage {a} reads {targets[b]} (target of {b}) but is scheduled before it"
                )
    return [
        Stage(s, targets[s], members[s], k, ids[k - 1] if k else None)
        for k, s in enumerate(ids)
    ]


def derive_stages(dog: Dog, schedule) -> list[Stage]:
    """Stages in execution order.

    ``schedule`` is either a mapping of stage id to submit time or a sequence of
    ``(target node, submit time)`` pairs.
    """
    if isinstance(schedule, Mapping):
        return order_stages(dog, schedule)
    by_target = {t: s for s, t in dog.targets.items()}
    submit = {}
    for target, t in schedule:
        if target not in by_target:
            raise MissingTarget(f"{target!r} is not a stage target")
        submit[by_target[target]] = t
    return order_stages(dog, submit)


def stage_dependencies(stages: Sequence[Stage]) -> set[tuple[str, str]]:
    """Pairs ``(producer, consumer)`` where ``consumer`` reads ``producer``'s target."""
    return {
        (b.id, a.id)
        for a in stages
        for b in stages
        if a.id != b.id and b.target in a.members
    }

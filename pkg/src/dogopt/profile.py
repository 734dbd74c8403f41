"""Runtime statistics from prior runs and the stage schedule derived from them.

Profile JSON layout (units live in the field names)::

    {
      "nodes":  {"v1": {"time_ms": 12.0, "out_size_bytes": 4096, "out_count": 100}},
      "stages": {"s0": {"submit_ms": 0}},
      "system": {"store_budget_bytes": 8192, "executor_memory_bytes": 65536},
      "datasets": {"reviews": {"count": 100}}
    }

``out_count``, ``datasets`` and ``executor_memory_bytes`` are optional.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .dog import Dog, Stage, order_stages
from .errors import IdMismatch, MissingStat, NegativeValue, PlanError

log = logging.getLogger(__name__)

_NODE_FIELDS = ("time_ms", "out_size_bytes", "out_count")


@dataclass(frozen=True)
class ProfileStats:
    time_ms: Mapping[str, float]
    size_bytes: Mapping[str, float]
    count: Mapping[str, float] = field(default_factory=dict)
    submit_ms: Mapping[str, float] = field(default_factory=dict)
    store_budget: float = 0.0
    executor_memory: float | None = None
    dataset_count: Mapping[str, float] = field(default_factory=dict)

    __hash__ = None

    def time(self, v: str, dog: Dog | None = None) -> float:
        """T_v; the dummy Source/Sink default to 0 when unprofiled."""
        if v in self.time_ms:
            return self.time_ms[v]
        if dog is not None and v in (dog.source, dog.sink):
            return 0.0
        raise MissingStat(v, "time_ms")

    def size(self, v: str, dog: Dog | None = None) -> float:
        if v in self.size_bytes:
            return self.size_bytes[v]
        if dog is not None and v in (dog.source, dog.sink):
            return 0.0
        raise MissingStat(v, "out_size_bytes")

    def with_budget(self, budget: float) -> "ProfileStats":
        from dataclasses import replace

        _nonneg(budget, "store_budget_bytes")
        return replace(self, store_budget=float(budget))


def _nonneg(value, what):
    if not isinstance(value, (int, float)) or isinstance(value, bool) or math.isnan(value):
        raise NegativeValue(f"{what} must be a number, got {value!r}")
    if value < 0:
        raise NegativeValue(f"{what} = {value} is negative")
    return float(value)


def profile_from_dict(doc: Mapping) -> ProfileStats:
    nodes = doc.get("nodes", {})
    times, sizes, counts = {}, {}, {}
    for ident, rec in nodes.items():
        for fld in ("time_ms", "out_size_bytes"):
            if fld not in rec:
                raise MissingStat(ident, fld)
        times[ident] = _nonneg(rec["time_ms"], f"{ident}.time_ms")
        sizes[ident] = _nonneg(rec["out_size_bytes"], f"{ident}.out_size_bytes")
        if "out_count" in rec:
            counts[ident] = _nonneg(rec["out_count"], f"{ident}.out_count")
        extra = set(rec) - set(_NODE_FIELDS)
        if extra:
            raise PlanError(f"profile node {ident}: unknown fields {sorted(extra)}")
    submit = {}
    for sid, rec in doc.get("stages", {}).items():
        if "submit_ms" not in rec:
            raise MissingStat(sid, "submit_ms")
        submit[sid] = _nonneg(rec["submit_ms"], f"{sid}.submit_ms")
    system = doc.get("system", {})
    if "store_budget_bytes" not in system:
        raise MissingStat("system", "store_budget_bytes")
    budget = _nonneg(system["store_budget_bytes"], "store_budget_bytes")
    exe = system.get("executor_memory_bytes")
    if exe is not None:
        exe = _nonneg(exe, "executor_memory_bytes")
        if budget > exe:
            raise PlanError("store budget exceeds executor memory")
    ds = {k: _nonneg(v["count"], f"{k}.count") for k, v in doc.get("datasets", {}).items()}
    return ProfileStats(times, sizes, counts, submit, budget, exe, ds)


def profile_to_dict(stats: ProfileStats) -> dict:
    nodes = {}
    for v in stats.time_ms:
        rec = {"time_ms": stats.time_ms[v], "out_size_bytes": stats.size_bytes[v]}
        if v in stats.count:
            rec["out_count"] = stats.count[v]
        nodes[v] = rec
    doc = {
        "nodes": nodes,
        "stages": {s: {"submit_ms": t} for s, t in stats.submit_ms.items()},
        "system": {"store_budget_bytes": stats.store_budget},
    }
    if stats.executor_memory is not None:
        doc["system"]["executor_memory_bytes"] = stats.executor_memory
    if stats.dataset_count:
        doc["datasets"] = {k: {"count": v} for k, v in stats.dataset_count.items()}
    return doc


def parse_profile(source, dog: Dog | None = None) -> ProfileStats:
    """Load a profile from a path, JSON text or decoded dict.

    With ``dog`` given, every operator must have time and size, and every stage a
    submit time; gaps raise :class:`MissingStat` naming the node or stage.
    """
    if isinstance(source, Mapping):
        doc = source
    else:
        text = str(source)
        if not text.lstrip().startswith("{"):
            text = Path(source).read_text()
        doc = json.loads(text)
    stats = profile_from_dict(doc)
    if dog is not None:
        check_coverage(stats, dog)
    return stats


def check_coverage(stats: ProfileStats, dog: Dog) -> None:
    for v in dog.operators:
        if v not in stats.time_ms:
            raise MissingStat(v, "time_ms")
        if v not in stats.size_bytes:
            raise MissingStat(v, "out_size_bytes")
    for sid in dog.targets:
        if sid not in stats.submit_ms:
            raise MissingStat(sid, "submit_ms")


def _mean_map(maps: Sequence[Mapping[str, float]], what: str) -> dict[str, float]:
    keys = set(maps[0])
    for m in maps[1:]:
        if set(m) != keys:
            raise IdMismatch(f"runs cover different {what}: {sorted(keys ^ set(m))}")
    return {k: math.fsum(m[k] for m in maps) / len(maps) for k in maps[0]}


def merge_runs(runs: Sequence[ProfileStats]) -> ProfileStats:
    """Average every measured field over runs.

    Budget and executor memory are configuration, not measurements: the
    smallest value wins so the merged plan fits every run.
    """
    if not runs:
        raise ValueError("no runs to merge")
    if len(runs) == 1:
        return runs[0]
    exe = [r.executor_memory for r in runs if r.executor_memory is not None]
    budgets = {r.store_budget for r in runs}
    if len(budgets) > 1:
        log.warning("runs disagree on the store budget %s; using the smallest", sorted(budgets))
    return ProfileStats(
        time_ms=_mean_map([r.time_ms for r in runs], "nodes"),
        size_bytes=_mean_map([r.size_bytes for r in runs], "nodes"),
        count=_mean_map([r.count for r in runs], "node counts"),
        submit_ms=_mean_map([r.submit_ms for r in runs], "stages"),
        store_budget=min(budgets),
        executor_memory=min(exe) if len(exe) == len(runs) else None,
        dataset_count=_mean_map([r.dataset_count for r in runs], "datasets"),
    )


def schedule_order(stats: ProfileStats, dog: Dog) -> list[str]:
    """E_S: stage ids sorted by submit time, validated against data dependencies."""
    return [s.id for s in order_stages(dog, stats.submit_ms)]


def stages_for(dog: Dog, stats: ProfileStats) -> list[Stage]:
    return order_stages(dog, stats.submit_ms)

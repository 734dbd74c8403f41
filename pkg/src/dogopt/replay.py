"""Cache-aware replay of a stage schedule.

Each stage is replayed by demand: the target asks its inputs for data, and
every request either hits a node kept in the cache row left by the previous
stage or recomputes that node (charging its profiled time) and recurses.
A node reached along several routes is therefore recomputed once per route.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .cache.objective import as_array, check_binary_feasible
from .dog import Dog, Stage, resolve_max_paths
from .errors import OrderViolation, PathExplosion
from .profile import ProfileStats


@dataclass
class StageReplay:
    stage: str
    executed: list  # node ids in recomputation order, repeats included
    cost: float


@dataclass
class ReplayCost:
    stages: list
    total: float

    def to_dict(self) -> dict:
        return {
            "total_ms": self.total,
            "stages": [{"stage": s.stage, "executed": s.executed, "cost_ms": s.cost} for s in self.stages],
        }


def _replay_stage(dog: Dog, stage: Stage, stats: ProfileStats, row, cap: int) -> StageReplay:
    idx = dog.index

    def cached(v):
        return row is not None and row[idx[v]] == 1

    executed = []
    if not cached(stage.target):
        stack = [stage.target]
        while stack:
            v = stack.pop()
            executed.append(v)
            if len(executed) > cap:
                raise PathExplosion(len(executed), cap)
            for p in reversed(dog.pred[v]):
                if not cached(p):
                    stack.append(p)
    cost = math.fsum(stats.time(v, dog) for v in executed)
    return StageReplay(stage.id, executed, cost)


def simulate_with_cache(
    dog: Dog,
    stages: Sequence[Stage],
    stats: ProfileStats,
    W,
    schedule: Sequence[str] | None = None,
    budget: float | None = None,
    max_paths=None,
) -> ReplayCost:
    """Replay ``stages`` in schedule order under cache matrix ``W``."""
    check_binary_feasible(dog, stats, W, budget)
    arr = as_array(W)
    ordered = sorted(stages, key=lambda s: s.sched_order)
    if schedule is not None and list(schedule) != [s.id for s in ordered]:
        raise OrderViolation(f"schedule {list(schedule)} disagrees with stage order")
    cap = resolve_max_paths(max_paths)
    out = []
    for k, st in enumerate(ordered):
        row = None if k == 0 else arr[k - 1]
        out.append(_replay_stage(dog, st, stats, row, cap))
    return ReplayCost(out, math.fsum(s.cost for s in out))

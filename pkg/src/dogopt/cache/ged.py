"""Global Execution Distance and the cache-candidate sets it induces."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..dog import Dog, Stage


@dataclass(frozen=True)
class GedTable:
    """``values[step, col]`` is the distance, NaN while the node is unvisited."""

    steps: tuple  # stage ids in schedule order
    columns: tuple  # node ids, same order as Dog.order
    values: np.ndarray

    __hash__ = None

    def get(self, step: int, node: str) -> float | None:
        x = self.values[step, self.columns.index(node)]
        return None if np.isnan(x) else float(x)

    def row(self, step: int) -> dict:
        return {c: self.get(step, c) for c in self.columns}

    def to_dict(self, operators: Sequence[str] | None = None) -> dict:
        cols = list(operators) if operators is not None else list(self.columns)
        return {
            "steps": list(self.steps),
            "columns": cols,
            "rows": [[self.get(k, c) for c in cols] for k in range(len(self.steps))],
        }


def stage_references(dog: Dog, stages: Sequence[Stage]) -> list[set]:
    """Per stage, the earlier-produced nodes its newly computed nodes read directly.

    A node computed inside the same stage never counts, nor does a node that is
    merely an ancestor of an earlier-produced input.
    """
    produced: set = set()
    refs = []
    for st in sorted(stages, key=lambda s: s.sched_order):
        new = st.members - produced - {dog.source}
        refs.append(
            {
                v
                for u in new
                for v in dog.pred[u]
                if v in produced and v != dog.source
            }
        )
        produced |= st.members
    return refs


def compute_ged(dog: Dog, stages: Sequence[Stage]) -> GedTable:
    stages = sorted(stages, key=lambda s: s.sched_order)
    n = len(stages)
    cols = tuple(dog.order)
    col = dog.index
    vals = np.full((n, len(cols)), np.nan)
    refs = stage_references(dog, stages)
    produced: set = {dog.source}
    for eps, st in enumerate(stages):
        produced |= st.members
        for v in produced:
            if v == dog.sink:
                continue
            vals[eps, col[v]] = float(
                sum(f - eps for f in range(eps + 1, n) if v in refs[f])
            )
    return GedTable(tuple(s.id for s in stages), cols, vals)


def cache_candidates(ged: GedTable, step: int) -> set:
    """H for the given schedule step: nodes with positive distance."""
    row = ged.values[step]
    return {c for c, x in zip(ged.columns, row) if not np.isnan(x) and x > 0}


def all_candidates(ged: GedTable) -> list[set]:
    return [cache_candidates(ged, k) for k in range(len(ged.steps))]

"""Stage costs, the caching gain F and its concave envelope L.

Rows of a cache matrix are schedule steps: row ``k`` holds what stays resident
after the k-th executed stage, so the stage at step ``k`` reads row ``k-1``
(the first stage reads nothing).

The gain is measured against the no-cache cost, where a node is recomputed once
per path to its stage target. When every member has a single path to the
target this coincides with the plain member-sum stage cost.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..dog import Dog, Stage, paths, paths_into, resolve_max_paths
from ..errors import DomainError, InfeasibleW
from ..profile import ProfileStats


@dataclass
class CacheMatrix:
    """Binary stage-by-node residency matrix, rows in schedule order."""

    steps: tuple
    columns: tuple
    values: np.ndarray

    @classmethod
    def zeros(cls, dog: Dog, stages: Sequence[Stage]) -> "CacheMatrix":
        steps = tuple(s.id for s in sorted(stages, key=lambda s: s.sched_order))
        return cls(steps, tuple(dog.order), np.zeros((len(steps), len(dog.order)), dtype=np.int8))

    @classmethod
    def from_cells(cls, dog, stages, cells) -> "CacheMatrix":
        """``cells`` is an iterable of ``(step, node)`` pairs set to 1."""
        w = cls.zeros(dog, stages)
        for step, node in cells:
            w[step, node] = 1
        return w

    def _col(self, node):
        return self.columns.index(node) if isinstance(node, str) else node

    def __getitem__(self, key):
        step, node = key
        return int(self.values[step, self._col(node)])

    def __setitem__(self, key, value):
        step, node = key
        self.values[step, self._col(node)] = value

    def cached(self, step: int) -> list[str]:
        return [c for c, x in zip(self.columns, self.values[step]) if x]

    def to_dict(self) -> dict:
        return {"steps": list(self.steps), "columns": list(self.columns), "values": self.values.astype(int).tolist()}


def as_array(w) -> np.ndarray:
    return w.values if isinstance(w, CacheMatrix) else np.asarray(w)


def _pred_row(w: np.ndarray, stage: Stage) -> np.ndarray | None:
    return None if stage.sched_order == 0 else w[stage.sched_order - 1]


def stage_paths(dog: Dog, stage: Stage, max_paths: int | None = None) -> dict:
    """Memoised ``{member: paths member -> target}`` for a stage."""
    cap = resolve_max_paths(max_paths)
    cache = dog.__dict__.setdefault("_stage_paths", {})
    key = (stage.target, stage.members, cap)
    if key not in cache:
        cache[key] = paths_into(dog, stage.target, stage.members, max_paths=cap)
    return cache[key]


def stage_cost(stage: Stage, stats: ProfileStats, dog: Dog | None = None) -> float:
    """C_s: every member's time counted once."""
    return math.fsum(stats.time(v, dog) for v in sorted(stage.members))


def recompute_factor(dog: Dog, vk: str, vl: str, stage: Stage, w, max_paths=None) -> float:
    """How many times ``vk`` is recomputed to produce ``vl`` in ``stage`` under ``w``."""
    if vk not in stage.members or vl not in stage.members:
        raise ValueError(f"{vk} and {vl} must be members of stage {stage.id}")
    row = _pred_row(as_array(w), stage)
    total = 0.0
    for p in paths(dog, vk, vl, max_paths=max_paths):
        prod = 1.0
        if row is not None:
            for v in p:
                prod *= 1.0 - float(row[dog.index[v]])
        total += prod
    return total


def expected_stage_cost(dog: Dog, stage: Stage, stats: ProfileStats, w, max_paths=None) -> float:
    """C'_s: sum over members and their paths to the target of T_v times the uncached product."""
    row = _pred_row(as_array(w), stage)
    idx = dog.index
    terms = []
    for v, plist in stage_paths(dog, stage, max_paths).items():
        t = stats.time(v, dog)
        for p in plist:
            prod = 1.0
            if row is not None:
                for u in p:
                    prod *= 1.0 - float(row[idx[u]])
            terms.append(t * prod)
    return math.fsum(terms)


def nocache_cost(dog: Dog, stage: Stage, stats: ProfileStats, max_paths=None) -> float:
    return math.fsum(
        stats.time(v, dog) * len(plist) for v, plist in stage_paths(dog, stage, max_paths).items()
    )


def check_binary_feasible(
    dog: Dog,
    stats: ProfileStats,
    w,
    budget: float | None = None,
    candidates: Sequence[set] | None = None,
) -> None:
    """Raise :class:`InfeasibleW` unless ``w`` is binary and fits the budget in every row.

    With ``candidates`` (one set per row), also enforce the H-zero constraint.
    """
    arr = as_array(w)
    budget = stats.store_budget if budget is None else budget
    if not np.all((arr == 0) | (arr == 1)):
        raise InfeasibleW("cache matrix entries must be 0 or 1")
    sizes = np.array([stats.size(v, dog) for v in dog.order])
    for k, row in enumerate(arr):
        load = math.fsum(sizes[row.astype(bool)])
        if load > budget * (1 + 1e-12) + 1e-9:
            raise InfeasibleW(f"row {k} stores {load} bytes over the budget {budget}")
        if row[dog.index[dog.source]] or row[dog.index[dog.sink]]:
            raise InfeasibleW("Source and Sink cannot be cached")
        if candidates is not None:
            extra = set(np.array(dog.order)[row.astype(bool)]) - set(candidates[k])
            if extra:
                raise InfeasibleW(f"row {k} caches non-candidates {sorted(extra)}")


def gain(dog: Dog, stages: Sequence[Stage], stats: ProfileStats, w, max_paths=None) -> float:
    """F(w) evaluated by the product formula; accepts fractional ``w`` too."""
    arr = as_array(w).astype(float)
    base = math.fsum(nocache_cost(dog, s, stats, max_paths) for s in stages)
    exp = math.fsum(expected_stage_cost(dog, s, stats, arr, max_paths) for s in stages)
    return base - exp


@dataclass
class GainReport:
    C0: float
    F: float
    L: float
    stage_cost: dict
    nocache_cost: dict
    expected_cost: dict
    oracle_F: float | None = None
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = {
            "C0": self.C0,
            "F": self.F,
            "L": self.L,
            "stages": {
                s: {"C_s": self.stage_cost[s], "C_s_nocache": self.nocache_cost[s], "C_s_expected": self.expected_cost[s]}
                for s in self.stage_cost
            },
        }
        if self.oracle_F is not None:
            d["oracle_F"] = self.oracle_F
            d["ratio"] = self.F / self.oracle_F if self.oracle_F > 0 else 1.0
        return d


def caching_gain(
    dog: Dog,
    stages: Sequence[Stage],
    stats: ProfileStats,
    w,
    budget: float | None = None,
    candidates: Sequence[set] | None = None,
    max_paths=None,
) -> GainReport:
    """F(w) for a feasible binary matrix, with per-stage terms."""
    check_binary_feasible(dog, stats, w, budget, candidates)
    arr = as_array(w)
    ordered = sorted(stages, key=lambda s: s.sched_order)
    c = {s.id: stage_cost(s, stats, dog) for s in ordered}
    c0 = {s.id: nocache_cost(dog, s, stats, max_paths) for s in ordered}
    ce = {s.id: expected_stage_cost(dog, s, stats, arr, max_paths) for s in ordered}
    base = math.fsum(c0.values())
    F = base - math.fsum(ce.values())
    L = relaxed_gain(dog, stages, stats, arr, max_paths)
    return GainReport(base, F, L, c, c0, ce)


class CompiledObjective:
    """Path incidence matrices for fast F and L evaluation.

    For the stage at step ``k >= 1`` the rows of ``incidence[k-1]`` are that
    stage's (member, path) pairs and ``weights[k-1]`` the member times.
    """

    def __init__(self, dog: Dog, stages: Sequence[Stage], stats: ProfileStats, max_paths=None):
        self.dog = dog
        self.stages = sorted(stages, key=lambda s: s.sched_order)
        self.n_rows = len(self.stages)
        self.n_cols = len(dog.order)
        self.incidence: list[np.ndarray] = []
        self.weights: list[np.ndarray] = []
        first = self.stages[0] if self.stages else None
        self.base = 0.0
        if first is not None:
            self.base = nocache_cost(dog, first, stats, max_paths)
        for st in self.stages[1:]:
            rows, wts = [], []
            for v, plist in stage_paths(dog, st, max_paths).items():
                t = stats.time(v, dog)
                for p in plist:
                    r = np.zeros(self.n_cols, dtype=bool)
                    r[[dog.index[u] for u in p]] = True
                    rows.append(r)
                    wts.append(t)
            self.incidence.append(np.array(rows, dtype=bool).reshape(len(rows), self.n_cols))
            self.weights.append(np.array(wts, dtype=float))
            self.base += float(np.sum(self.weights[-1]))
        self.incidence.append(np.zeros((0, self.n_cols), dtype=bool))
        self.weights.append(np.zeros(0))

    def row_gain(self, r: int, row: np.ndarray) -> float:
        """Multilinear gain of row ``r`` (benefits the stage at step r+1)."""
        A, t = self.incidence[r], self.weights[r]
        if not len(t):
            return 0.0
        keep = np.where(A, 1.0 - row[None, :], 1.0).prod(axis=1)
        return float(t @ (1.0 - keep))

    def row_relaxed(self, r: int, row: np.ndarray) -> float:
        A, t = self.incidence[r], self.weights[r]
        if not len(t):
            return 0.0
        return float(t @ np.minimum(1.0, A.astype(float) @ row))

    def F(self, w) -> float:
        w = as_array(w).astype(float)
        return sum(self.row_gain(r, w[r]) for r in range(self.n_rows))

    def L(self, w) -> float:
        w = as_array(w).astype(float)
        return sum(self.row_relaxed(r, w[r]) for r in range(self.n_rows))


def relaxed_gain(dog: Dog, stages: Sequence[Stage], stats: ProfileStats, w, max_paths=None) -> float:
    """L(w), the concave envelope of F; entries must lie in [0, 1]."""
    arr = as_array(w).astype(float)
    if arr.size and (np.nanmin(arr) < 0 or np.nanmax(arr) > 1 or np.isnan(arr).any()):
        raise DomainError("relaxed gain needs every entry in [0, 1]")
    return CompiledObjective(dog, stages, stats, max_paths).L(arr)

"""Cache allocation: LP relaxation of L, pipage rounding, and an exhaustive oracle.

The objective separates by row: row ``r`` only affects the stage executed at
step ``r + 1``. Every routine here therefore works one row at a time; the
combined matrix is the row-wise concatenation.
"""
from __future__ import annotations

import logging
import math
from itertools import combinations
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from ..dog import Dog, Stage
from ..errors import DogoptError, TooLarge
from ..profile import ProfileStats
from .ged import GedTable, all_candidates, compute_ged
from .objective import CacheMatrix, CompiledObjective, caching_gain, check_binary_feasible

log = logging.getLogger(__name__)

FRAC_TOL = 1e-9
BRUTE_FORCE_LIMIT = 24  # log2 of the number of assignments enumerated


@dataclass
class RelaxedSolution:
    w: np.ndarray
    L: float
    pinned: list = field(default_factory=list)  # (step, node) never cacheable


def _row_vars(dog, stats, cands, budget):
    """Candidate columns that can fit the budget, and those pinned to 0."""
    keep, pinned = [], []
    for v in sorted(cands, key=dog.index.__getitem__):
        if v in (dog.source, dog.sink):
            continue
        if stats.size(v, dog) > budget:
            pinned.append(v)
        else:
            keep.append(dog.index[v])
    return keep, pinned


def _resolve(dog, stages, stats, candidates, budget):
    if candidates is None:
        candidates = compute_ged(dog, stages)
    if isinstance(candidates, GedTable):
        candidates = all_candidates(candidates)
    budget = stats.store_budget if budget is None else float(budget)
    if len(candidates) != len(stages):
        raise ValueError("need one candidate set per schedule step")
    return list(candidates), budget


def _row_lp(obj: CompiledObjective, r: int, cols, sizes, budget, tol=1e-9, fixed=(), banned=()):
    """LP optimum of row ``r`` over ``cols``; ``fixed`` columns forced to 1, ``banned`` to 0."""
    x_out = np.zeros(obj.n_cols)
    A, t = obj.incidence[r], obj.weights[r]
    if not cols or not len(t):
        x_out[list(fixed)] = 1.0
        return x_out
    sub = A[:, cols]
    live = sub.any(axis=1) & (t > 0)
    sub, tl = sub[live], t[live]
    if not len(tl):
        x_out[list(fixed)] = 1.0
        return x_out
    nx, nz = len(cols), len(tl)
    c = np.concatenate([np.zeros(nx), -tl])
    # z_p - sum_{v in p} x_v <= 0
    a_path = np.hstack([-sub.astype(float), np.eye(nz)])
    a_knap = np.concatenate([sizes[cols], np.zeros(nz)])[None, :]
    bounds = [(1.0, 1.0) if j in fixed else (0.0, 0.0) if j in banned else (0.0, 1.0) for j in cols]
    res = linprog(
        c,
        A_ub=np.vstack([a_path, a_knap]),
        b_ub=np.concatenate([np.zeros(nz), [budget]]),
        bounds=bounds + [(0.0, 1.0)] * nz,
        method="highs",
        options={"primal_feasibility_tolerance": max(tol, 1e-10), "dual_feasibility_tolerance": max(tol, 1e-10)},
    )
    if res.status != 0:
        raise DogoptError(f"LP for step {r} failed: {res.message}")
    x = np.clip(res.x[:nx], 0.0, 1.0)
    x[x < FRAC_TOL] = 0.0
    x[x > 1 - FRAC_TOL] = 1.0
    x_out[cols] = x
    return x_out


def solve_relaxation(
    dog: Dog,
    stages: Sequence[Stage],
    stats: ProfileStats,
    candidates=None,
    budget: float | None = None,
    max_paths=None,
    tol: float = 1e-9,
) -> RelaxedSolution:
    """Maximise L over the continuous relaxation of the candidate-restricted domain.

    Each row is an LP: one variable per cacheable candidate, one auxiliary
    ``z <= min(1, sum of the path's variables)`` per (stage, path), and the row
    knapsack. Solved with HiGHS.
    """
    candidates, budget = _resolve(dog, stages, stats, candidates, budget)
    obj = CompiledObjective(dog, stages, stats, max_paths)
    sizes = np.array([stats.size(v, dog) for v in dog.order])
    w = np.zeros((obj.n_rows, obj.n_cols))
    pinned = []
    for r in range(obj.n_rows):
        cols, pin = _row_vars(dog, stats, candidates[r], budget)
        pinned += [(r, v) for v in pin]
        if pin:
            log.warning("step %d: %s larger than the store budget, never cached", r, pin)
        w[r] = _row_lp(obj, r, cols, sizes, budget, tol)
    return RelaxedSolution(w, obj.L(w), pinned)


def _round_row(row, cols, sizes, budget, row_gain):
    """Pipage-round one row in place; True if the last fractional entry was dropped."""

    def frac():
        return [j for j in cols if FRAC_TOL < row[j] < 1 - FRAC_TOL]

    for j in frac():
        if sizes[j] == 0:
            row[j] = 1.0
    f = frac()
    while len(f) >= 2:
        i, j = f[0], f[1]
        si, sj = sizes[i], sizes[j]
        wi, wj = row[i], row[j]
        # endpoint A raises i and lowers j; B the reverse. Load is unchanged.
        if (1 - wi) * si <= wj * sj:
            a = (1.0, wj - (1 - wi) * si / sj)
        else:
            a = (wi + wj * sj / si, 0.0)
        if wi * si <= (1 - wj) * sj:
            b = (0.0, wj + wi * si / sj)
        else:
            b = (wi - (1 - wj) * sj / si, 1.0)
        best = None
        for cand in (a, b):
            row[i], row[j] = cand
            g = row_gain(row)
            if best is None or g > best[0] + 1e-12:
                best = (g, cand)
        row[i], row[j] = best[1]
        for k in (i, j):
            if row[k] < FRAC_TOL:
                row[k] = 0.0
            elif row[k] > 1 - FRAC_TOL:
                row[k] = 1.0
        f = frac()
    if f:
        j = f[0]
        load = math.fsum(sizes[k] for k in cols if row[k] == 1.0)
        if load + sizes[j] <= budget * (1 + 1e-12) + 1e-9:
            row[j] = 1.0
        else:
            row[j] = 0.0
            return True
    return False


def _fits(chosen, sizes, budget) -> bool:
    return math.fsum(sizes[list(chosen)]) <= budget * (1 + 1e-12) + 1e-9


def _partial_enumeration(obj: CompiledObjective, r, cols, sizes, budget, tol, depth=3):
    """Best row found by fixing every small feasible seed set and rounding the rest.

    Seeds of fewer than ``depth`` items are taken as they are. For a seed of
    exactly ``depth`` items, ordered greedily, every other item whose marginal
    gain beats the seed's last one is banned, the remaining LP is solved with
    the seed forced in, and the result is pipage-rounded.
    """

    def f(items):
        vec = np.zeros(obj.n_cols)
        vec[list(items)] = 1.0
        return obj.row_gain(r, vec)

    best_val, best_vec = -math.inf, np.zeros(obj.n_cols)

    def consider(vec):
        nonlocal best_val, best_vec
        val = obj.row_gain(r, vec)
        if val > best_val + 1e-12:
            best_val, best_vec = val, vec

    for k in range(min(depth, len(cols) + 1)):
        for seed in combinations(cols, k):
            if _fits(seed, sizes, budget):
                vec = np.zeros(obj.n_cols)
                vec[list(seed)] = 1.0
                consider(vec)
    for seed in combinations(cols, depth):
        if not _fits(seed, sizes, budget):
            continue
        ordered: list = []
        for _ in range(depth):
            rest = [c for c in seed if c not in ordered]
            ordered.append(max(rest, key=lambda c: (f(ordered + [c]), -c)))
        head = ordered[:-1]
        base = f(head)
        threshold = f(ordered) - base
        banned = [e for e in cols if e not in seed and f(head + [e]) - base > threshold + 1e-12]
        x = _row_lp(obj, r, cols, sizes, budget, tol, fixed=seed, banned=banned)
        _round_row(x, cols, sizes, budget, lambda row: obj.row_gain(r, row))
        consider((x > 0.5).astype(float))
    return best_vec


def round_relaxation(
    w_star,
    dog: Dog,
    stages: Sequence[Stage],
    stats: ProfileStats,
    budget: float | None = None,
    candidates=None,
    max_paths=None,
    repair: bool = True,
    tol: float = 1e-9,
) -> tuple[CacheMatrix, list]:
    """Pipage rounding, optionally repaired where the final floor step lost mass.

    Returns the matrix and the list of rows that went through partial
    enumeration. A repaired row is replaced only when that strictly helps.
    """
    candidates, budget = _resolve(dog, stages, stats, candidates, budget)
    obj = CompiledObjective(dog, stages, stats, max_paths)
    sizes = np.array([stats.size(v, dog) for v in dog.order])
    w = np.array(w_star, dtype=float, copy=True)
    repaired = []
    for r in range(obj.n_rows):
        cols, _ = _row_vars(dog, stats, candidates[r], budget)
        allowed = np.zeros(obj.n_cols, dtype=bool)
        allowed[cols] = True
        w[r, ~allowed] = 0.0
        dropped = _round_row(w[r], cols, sizes, budget, lambda row, r=r: obj.row_gain(r, row))
        if dropped and repair:
            alt = _partial_enumeration(obj, r, cols, sizes, budget, tol)
            if obj.row_gain(r, alt) > obj.row_gain(r, w[r]) + 1e-12:
                w[r] = alt
            repaired.append(r)
    out = CacheMatrix.zeros(dog, stages)
    out.values[:] = (w > 0.5).astype(np.int8)
    check_binary_feasible(dog, stats, out, budget, candidates)
    return out, repaired


def pipage_round(
    w_star,
    dog: Dog,
    stages: Sequence[Stage],
    stats: ProfileStats,
    budget: float | None = None,
    candidates=None,
    max_paths=None,
) -> CacheMatrix:
    """Round a fractional solution to a feasible binary cache matrix.

    Row by row, the two fractional entries with the smallest column indices
    trade mass along the direction that keeps the row's storage load fixed.
    The gain is convex along that line, so the better endpoint never loses
    gain. A last fractional entry is raised to 1 if it fits, else dropped.
    """
    return round_relaxation(w_star, dog, stages, stats, budget, candidates, max_paths, repair=False)[0]


def brute_force_optimal(
    dog: Dog,
    stages: Sequence[Stage],
    stats: ProfileStats,
    budget: float | None = None,
    candidates=None,
    max_paths=None,
    limit: int = BRUTE_FORCE_LIMIT,
) -> tuple[CacheMatrix, float]:
    """Exact maximiser of F over the candidate-restricted binary domain.

    Ties go to the lexicographically smallest matrix (row-major, 0 < 1).
    Raises :class:`TooLarge` if more than ``2**limit`` assignments exist.
    """
    candidates, budget = _resolve(dog, stages, stats, candidates, budget)
    per_row = [_row_vars(dog, stats, c, budget)[0] for c in candidates]
    total = sum(len(c) for c in per_row)
    if total > limit:
        raise TooLarge(f"2**{total} assignments exceed the 2**{limit} guard")
    obj = CompiledObjective(dog, stages, stats, max_paths)
    sizes = np.array([stats.size(v, dog) for v in dog.order])
    w = np.zeros((obj.n_rows, obj.n_cols))
    best_total = 0.0
    for r, cols in enumerate(per_row):
        m = len(cols)
        best_val, best_vec = 0.0, np.zeros(obj.n_cols)
        best_key = tuple([0] * m)
        for mask in range(1 << m):
            bits = [(mask >> (m - 1 - k)) & 1 for k in range(m)]  # first column = most significant
            chosen = [c for c, b in zip(cols, bits) if b]
            if math.fsum(sizes[chosen]) > budget * (1 + 1e-12) + 1e-9:
                continue
            vec = np.zeros(obj.n_cols)
            vec[chosen] = 1.0
            val = obj.row_gain(r, vec)
            key = tuple(bits)
            scale = 1e-9 * max(1.0, abs(best_val))
            if val > best_val + scale or (abs(val - best_val) <= scale and key < best_key):
                best_val, best_vec, best_key = val, vec, key
        w[r] = best_vec
        best_total += best_val
    out = CacheMatrix.zeros(dog, stages)
    out.values[:] = w.astype(np.int8)
    return out, best_total


@dataclass
class CachePlan:
    matrix: CacheMatrix
    relaxed: RelaxedSolution
    report: object  # GainReport
    ged: GedTable
    candidates: list


def optimize_cache(
    dog: Dog,
    stages: Sequence[Stage],
    stats: ProfileStats,
    budget: float | None = None,
    max_paths=None,
    lp_tol: float = 1e-9,
    certify: bool = False,
    repair: bool = True,
) -> CachePlan:
    """GED, candidates, LP relaxation, rounding (with repair), gain report."""
    ged = compute_ged(dog, stages)
    cands = all_candidates(ged)
    relaxed = solve_relaxation(dog, stages, stats, cands, budget, max_paths, lp_tol)
    W, repaired = round_relaxation(relaxed.w, dog, stages, stats, budget, cands, max_paths, repair, lp_tol)
    report = caching_gain(dog, stages, stats, W, budget, cands, max_paths)
    report.L = relaxed.L
    report.warnings = [f"{node} never fits the store budget (step {r})" for r, node in relaxed.pinned]
    report.warnings += [f"step {r}: rounding dropped a fractional entry, row re-solved by enumeration" for r in repaired]
    if certify:
        try:
            _, report.oracle_F = brute_force_optimal(dog, stages, stats, budget, cands, max_paths)
        except TooLarge as exc:
            report.warnings.append(f"no certificate: {exc}")
    return CachePlan(W, relaxed, report, ged, cands)

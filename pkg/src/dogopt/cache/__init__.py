from .directives import emit_cache_plan
from .ged import GedTable, all_candidates, cache_candidates, compute_ged, stage_references
from .objective import (
    CacheMatrix,
    CompiledObjective,
    GainReport,
    caching_gain,
    check_binary_feasible,
    expected_stage_cost,
    gain,
    nocache_cost,
    recompute_factor,
    relaxed_gain,
    stage_cost,
)
from .solver import (
    CachePlan,
    RelaxedSolution,
    brute_force_optimal,
    optimize_cache,
    pipage_round,
    round_relaxation,
    solve_relaxation,
)

__all__ = [
    "CacheMatrix",
    "CachePlan",
    "CompiledObjective",
    "GainReport",
    "GedTable",
    "RelaxedSolution",
    "all_candidates",
    "brute_force_optimal",
    "cache_candidates",
    "caching_gain",
    "check_binary_feasible",
    "compute_ged",
    "emit_cache_plan",
    "expected_stage_cost",
    "gain",
    "nocache_cost",
    "optimize_cache",
    "pipage_round",
    "recompute_factor",
    "relaxed_gain",
    "round_relaxation",
    "solve_relaxation",
    "stage_cost",
    "stage_references",
]

"""Semantics-aware optimization advice for dataflow applications.

Plans are modelled as a graph of primitive operators between a dummy Source
and Sink. On top of that graph the package offers stage-level cache
allocation, filter pushdown licensed by Use/Def analysis, and attribute
pruning, plus a reference executor to check each rewrite.
"""
from .dog import Dog, Stage, build_dog, derive_stages, paths
from .executor import Dataset, equivalent, run_plan
from .plan import OpNode, Plan, load_plan, parse_plan
from .profile import ProfileStats, merge_runs, parse_profile, schedule_order
from .replay import simulate_with_cache

__all__ = [
    "Dataset",
    "Dog",
    "OpNode",
    "Plan",
    "ProfileStats",
    "Stage",
    "build_dog",
    "derive_stages",
    "equivalent",
    "load_plan",
    "merge_runs",
    "parse_plan",
    "parse_profile",
    "paths",
    "run_plan",
    "schedule_order",
    "simulate_with_cache",
]

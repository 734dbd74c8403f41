"""
Choosing what to keep in memory for a multi-stage job
=====================================================

The bundled reviews workload has seven stages that share intermediate
datasets. This walk-through goes from the plan and its profile to a set of
persist/unpersist directives, then replays the schedule to check that the
predicted saving is what the simulator actually measures.
"""

import numpy as np

from dogopt import workloads
from dogopt.cache import compute_ged, emit_cache_plan, optimize_cache
from dogopt.dog import build_dog
from dogopt.profile import stages_for
from dogopt.replay import simulate_with_cache
from dogopt.cache import CacheMatrix

plan = workloads.reviews_plan()
stats = workloads.reviews_profile()
dog = build_dog(plan)
stages = stages_for(dog, stats)

print("schedule:", [s.id for s in stages])
for s in stages:
    print(f"  {s.id}: target {s.target}, {len(s.members)} members")

###############################################################################
# How far ahead is each dataset needed?
# -------------------------------------
#
# After every step we measure, per node, how much future reuse is still
# pending. Nodes with a positive distance are the only ones worth keeping.

ged = compute_ged(dog, stages)
ops = dog.operators
print("\n      " + " ".join(f"{v:>4}" for v in ops))
for k, step in enumerate(ged.steps):
    cells = []
    for v in ops:
        x = ged.get(k, v)
        cells.append("   ." if x is None else f"{x:4.0f}")
    print(f"{step:>5} " + " ".join(cells))

###############################################################################
# Relax, solve, round
# -------------------
#
# The optimizer solves a linear relaxation per step and rounds it back to a
# 0/1 matrix that respects the store budget.

result = optimize_cache(dog, stages, stats, certify=True)
rep = result.report
print(f"\nbudget {stats.store_budget:.0f} bytes")
print(f"relaxed bound L = {rep.L:.1f} ms, rounded gain F = {rep.F:.1f} ms, exhaustive optimum = {rep.oracle_F:.1f} ms")
print("fractional entries in the relaxation:", int(np.sum((result.relaxed.w > 1e-9) & (result.relaxed.w < 1 - 1e-9))))

# A row only pays off for the stage that runs right after it, so a node is
# marked from the step before its first reader, not from where it was built.
for d in emit_cache_plan(result.matrix, stages):
    until = d["unpersist_after_stage"] or "end"
    print(f"  keep {d['node']} from after {d['persist_after_stage']} until after {until}")

###############################################################################
# Replaying the schedule
# ----------------------
#
# The simulator walks each stage backwards from its target and stops at
# anything held in memory, charging the profiled time of every node it runs.

base = simulate_with_cache(dog, stages, stats, CacheMatrix.zeros(dog, stages))
cached = simulate_with_cache(dog, stages, stats, result.matrix)
print(f"\nno cache: {base.total:.0f} ms, with plan: {cached.total:.0f} ms, saved {base.total - cached.total:.0f} ms")
for a, b in zip(base.stages, cached.stages):
    print(f"  {a.stage}: {a.cost:8.0f} -> {b.cost:8.0f}")

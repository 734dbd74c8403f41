"""
Finding attributes nobody reads
===============================

A job that tags reviews, groups them by product and sums ratings carries the
review text all the way through the shuffle without ever using it. The
attribute dependency graph makes that visible.
"""

import random

from dogopt import workloads
from dogopt.executor import equivalent
from dogopt.prune import analyze, apply_pruning, build_ddg, live_set

plan = workloads.review_attrs_plan()
for n in plan.nodes:
    print(f"{n.id:>3} {n.kind:<6} {n.udf.expr}")

ddg = build_ddg(plan)
live = live_set(ddg)
print(f"\n{len(ddg.nodes)} attribute instances, {len(ddg.edges)} edges, {len(live)} reach the sink")

report = analyze(plan)
for item in report:
    print(f"  {item.op}.{item.attribute}: {item.reason}")

###############################################################################
# Dropping them
# -------------

pruned = apply_pruning(plan, report)
print("\ninput schema now", pruned.datasets["reviews"])
for n in pruned.nodes:
    print(f"{n.id:>3} {n.udf.expr}")

rng = random.Random(0)
rows = [
    {"attr_0": f"B{rng.randint(0, 4)}", "attr_1": "someone", "attr_2": rng.randint(1, 5), "attr_3": "long text " * 20}
    for _ in range(500)
]
print("\nsame totals:", bool(equivalent(plan, pruned, {"reviews": rows})))
print("left to prune afterwards:", len(analyze(pruned)))

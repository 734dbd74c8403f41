"""
How much memory is enough?
==========================

Sweeping the store budget shows where extra memory stops paying off. For each
budget we report the LP bound, the rounded gain and the exhaustive optimum.
"""

import logging

from dogopt import workloads
from dogopt.cache import optimize_cache
from dogopt.dog import build_dog
from dogopt.profile import stages_for

# small budgets make the optimizer warn about every node that can never fit
logging.getLogger("dogopt").setLevel(logging.ERROR)

dog = build_dog(workloads.reviews_plan())
stats = workloads.reviews_profile()
stages = stages_for(dog, stats)

sizes = {v: stats.size(v) for v in dog.operators}
print("output sizes:", sizes)

print(f"\n{'budget':>8} {'L':>10} {'F':>10} {'optimum':>10}  kept at some step")
for budget in (0, 250, 500, 1000, 1500, 2000, 3000, 4000, 6000):
    res = optimize_cache(dog, stages, stats.with_budget(budget), certify=True)
    kept = sorted({v for k in range(len(stages)) for v in res.matrix.cached(k)}, key=dog.index.get)
    r = res.report
    print(f"{budget:>8} {r.L:>10.1f} {r.F:>10.1f} {r.oracle_F:>10.1f}  {', '.join(kept) or '-'}")

###############################################################################
# Past the point where every candidate fits at once, L, F and the optimum
# coincide and the curve is flat.

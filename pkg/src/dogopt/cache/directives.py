"""Turn a cache matrix into persist/unpersist advice."""
from __future__ import annotations

from typing import Sequence

from ..dog import Stage
from .objective import CacheMatrix


def emit_cache_plan(W: CacheMatrix, stages: Sequence[Stage] | None = None) -> list[dict]:
    """Scan each column top to bottom.

    A run of 1s starting at row ``a`` and ending before the 0 at row ``b``
    yields ``persist_after_stage = step a`` and ``unpersist_after_stage = step b``
    (``None`` when the run reaches the last row). Columns with several runs give
    several directives.
    """
    steps = list(W.steps) if stages is None else [s.id for s in sorted(stages, key=lambda s: s.sched_order)]
    out = []
    for c, node in enumerate(W.columns):
        col = W.values[:, c]
        k = 0
        while k < len(col):
            if col[k]:
                start = k
                while k < len(col) and col[k]:
                    k += 1
                out.append(
                    {
                        "node": node,
                        "persist_after_stage": steps[start],
                        "unpersist_after_stage": steps[k] if k < len(col) else None,
                    }
                )
            else:
                k += 1
    return out

"""Use/Def analysis, filter pushdown and regression-based benefit estimates."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import Inconsistent, MissingModel, MissingStat, NotAdjacent, SingularFit, Underdetermined, UnknownAttribute
from .plan import OpNode, Plan, topo_order, validate_plan
from .profile import ProfileStats

PUSHABLE = {"Map": "filter-pushdown-map", "Group": "filter-pushdown-group", "Set": "filter-pushdown-set"}


@dataclass(frozen=True)
class UseDefSets:
    use: frozenset
    defs: frozenset


def _derived(node: OpNode) -> tuple[frozenset, frozenset] | None:
    kind = node.kind
    if kind == "Filter":
        return node.predicate().refs, frozenset()
    assigns = node.assignments()
    if assigns is None:
        if kind in ("Set",):
            return frozenset(), frozenset()
        if kind == "Join":
            return frozenset(node.key), frozenset()
        return None
    use = frozenset().union(*(a.expr.refs for a in assigns)) if assigns else frozenset()
    defs = frozenset(a.target for a in assigns if not a.is_identity)
    if kind in ("Group", "Join"):
        use |= frozenset(node.key)
    if kind in ("Group", "Agg"):
        # aggregates are new values even when they keep the input's name
        defs = frozenset(a.target for a in assigns)
    if node.flatten is not None:
        defs |= {node.flatten}
    return use, defs


def derive_use_def(node: OpNode, input_schema: Sequence[str] | None = None) -> UseDefSets:
    """Attributes the node's UDF reads (use) and creates or changes (def).

    Declared sets must match what the expression implies. Opaque nodes rely
    on the declared sets alone.
    """
    got = _derived(node)
    du, dd = node.udf.declared_use, node.udf.declared_def
    if got is None:
        if du is None or dd is None:
            raise Inconsistent(f"node {node.id}: no expression and no declared use/def")
        use, defs = frozenset(du), frozenset(dd)
    else:
        use, defs = got
        if du is not None and frozenset(du) != use:
            raise Inconsistent(f"node {node.id}: declared use {sorted(du)} != derived {sorted(use)}")
        if dd is not None and frozenset(dd) != defs:
            raise Inconsistent(f"node {node.id}: declared def {sorted(dd)} != derived {sorted(defs)}")
    if node.kind == "Filter" and defs:
        raise Inconsistent(f"node {node.id}: a filter defines nothing")
    if input_schema is not None:
        for a in sorted(use):
            if a not in input_schema:
                raise UnknownAttribute(a, f"node {node.id}")
    return UseDefSets(use, defs)


@dataclass(frozen=True)
class SwapDecision:
    swappable: bool
    witness: frozenset

    def __bool__(self):
        return self.swappable


def can_swap(op1: OpNode, op2: OpNode) -> SwapDecision:
    """``op2`` reads ``op1``'s output; they commute iff U(op2) and D(op1) are disjoint."""
    if op1.id not in op2.inputs:
        raise NotAdjacent(f"{op2.id} does not consume {op1.id}")
    hit = derive_use_def(op2).use & derive_use_def(op1).defs
    return SwapDecision(not hit, frozenset(hit))


@dataclass
class Rewrite:
    kind: str
    nodes: tuple  # (upstream, filter)
    witness: frozenset = frozenset()
    safe: bool = True
    predicted_gain_ms: float | None = None
    recommended: bool = False

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "nodes": list(self.nodes),
            "safe": self.safe,
            "witness": sorted(self.witness),
            "predicted_gain_ms": self.predicted_gain_ms,
            "recommended": self.recommended,
        }


def _pushdown_check(plan: Plan, filt: OpNode, consumers) -> tuple[OpNode, SwapDecision] | None:
    """The upstream node and the swap decision, or None when the shape does not fit."""
    if filt.kind != "Filter" or filt.inputs[0] in plan.datasets:
        return None
    up = plan.node(filt.inputs[0])
    if up.kind not in PUSHABLE or consumers[up.id] != [filt.id]:
        return None
    dec = can_swap(up, filt)
    use = derive_use_def(filt).use
    if dec and up.kind == "Group":
        outside = use - set(up.key)
        if outside:
            dec = SwapDecision(False, frozenset(outside))
    if dec:
        # an opaque map may drop attributes it does not declare as defined
        missing = frozenset(a for i in up.inputs for a in use if a not in plan.input_schema(i))
        if missing:
            dec = SwapDecision(False, missing)
    return up, dec


def _fresh(base: str, taken: set) -> str:
    name, k = base, 1
    while name in taken:
        k += 1
        name = f"{base}{k}"
    taken.add(name)
    return name


def _reset_schema(n: OpNode) -> OpNode:
    if n.kind == "Map" and n.udf.expr is None:
        return n
    return replace(n, out_schema=())


def _apply(plan: Plan, up: OpNode, filt: OpNode) -> Plan:
    taken = {n.id for n in plan.nodes} | set(plan.datasets)
    nodes = []
    if up.kind == "Set":
        left = _fresh(f"{filt.id}_l", taken)
        right = _fresh(f"{filt.id}_r", taken)
        for n in plan.nodes:
            if n.id == filt.id:
                continue
            if n.id == up.id:
                nodes.append(replace(filt, id=left, inputs=(up.inputs[0],)))
                nodes.append(replace(filt, id=right, inputs=(up.inputs[1],)))
                nodes.append(replace(up, inputs=(left, right)))
            else:
                nodes.append(n)
    else:
        for n in plan.nodes:
            if n.id == filt.id:
                continue
            if n.id == up.id:
                nodes.append(replace(filt, inputs=up.inputs))
                nodes.append(replace(up, inputs=(filt.id,)))
            else:
                nodes.append(n)
    nodes = [
        replace(n, inputs=tuple(up.id if i == filt.id else i for i in n.inputs)) if n.id != up.id else n
        for n in nodes
    ]
    outputs = {k: (up.id if v == filt.id else v) for k, v in plan.outputs.items()}
    return validate_plan(replace(plan, nodes=tuple(_reset_schema(n) for n in nodes), outputs=outputs, targets=None))


def rewrite_trace(plan: Plan) -> tuple[Plan, list[tuple[Plan, Rewrite]]]:
    """Like :func:`rewrite_plan`, pairing each rewrite with the plan it was found in."""
    trace: list[tuple[Plan, Rewrite]] = []
    while True:
        consumers = plan.consumers()
        by_id = plan.by_id
        step = None
        for ident in topo_order(plan):
            hit = _pushdown_check(plan, by_id[ident], consumers)
            if hit is not None and hit[1]:
                step = hit[0], by_id[ident]
                break
        if step is None:
            return plan, trace
        up, filt = step
        trace.append((plan, Rewrite(PUSHABLE[up.kind], (up.id, filt.id))))
        plan = _apply(plan, up, filt)


def rewrite_plan(plan: Plan) -> tuple[Plan, list[Rewrite]]:
    """Push every filter as close to the data as the Use/Def checks allow.

    Returns the rewritten plan and the rewrites applied, in order. Stage
    targets of the input plan are dropped since node roles change.
    """
    final, trace = rewrite_trace(plan)
    return final, [r for _, r in trace]


def pushdown_filter(plan: Plan) -> list[Rewrite]:
    return rewrite_plan(plan)[1]


def blocked_pushdowns(plan: Plan) -> list[Rewrite]:
    """Filter/upstream pairs of pushable shape whose swap is refused, with witnesses."""
    consumers = plan.consumers()
    out = []
    for n in plan.nodes:
        hit = _pushdown_check(plan, n, consumers)
        if hit is not None and not hit[1]:
            out.append(Rewrite(PUSHABLE[hit[0].kind], (hit[0].id, n.id), hit[1].witness, safe=False))
    return out


# --------------------------------------------------------------------------
# cost models


@dataclass(frozen=True)
class PolyCostModel:
    """t(N) = sum_k coefficients[k] * N**k."""

    degree: int
    coefficients: tuple
    residual: float = 0.0

    def predict(self, n: float) -> float:
        acc = 0.0
        for c in reversed(self.coefficients):
            acc = acc * n + c
        return acc

    def to_dict(self) -> dict:
        return {"degree": self.degree, "coefficients": list(self.coefficients), "residual": self.residual}


def fit_cost_model(samples: Sequence[tuple[float, float]], degree: int = 2) -> PolyCostModel:
    """Least-squares polynomial in the element count N."""
    if not 0 <= degree <= 4:
        raise ValueError("degree must be between 0 and 4")
    if len(samples) < degree + 1:
        raise Underdetermined(f"{len(samples)} samples cannot fit degree {degree}")
    x = np.array([s[0] for s in samples], dtype=float)
    y = np.array([s[1] for s in samples], dtype=float)
    if len(np.unique(x)) < degree + 1:
        raise SingularFit(f"only {len(np.unique(x))} distinct N values for degree {degree}")
    if degree == 0:
        coef = np.array([math.fsum(y) / len(y)])
    else:
        poly = np.polynomial.Polynomial.fit(x, y, degree)
        coef = poly.convert().coef
    coef = np.pad(coef, (0, degree + 1 - len(coef)))
    if not np.all(np.isfinite(coef)):
        raise SingularFit("least-squares solution is not finite")
    resid = y - np.polynomial.polynomial.polyval(x, coef)
    return PolyCostModel(degree, tuple(float(c) for c in coef), float(resid @ resid))


def _input_count(ref: str, plan: Plan, stats: ProfileStats) -> float:
    if ref in plan.datasets:
        if ref not in stats.dataset_count:
            raise MissingStat(ref, "count")
        return stats.dataset_count[ref]
    if ref not in stats.count:
        raise MissingStat(ref, "out_count")
    return stats.count[ref]


def evaluate_rewrite(
    rewrite: Rewrite,
    models: Mapping[str, PolyCostModel],
    stats: ProfileStats,
    plan: Plan,
    threshold: float = 0.0,
) -> float:
    """Predicted time saved by running the filter first; fills in the rewrite.

    ``plan`` is the plan the rewrite was found in (before it was applied).
    """
    up_id, f_id = rewrite.nodes
    for ident in (up_id, f_id):
        if ident not in models:
            raise MissingModel(ident)
    mu, mf = models[up_id], models[f_id]
    up = plan.node(up_id)
    n_ins = [_input_count(i, plan, stats) for i in up.inputs]
    n_in = math.fsum(n_ins)
    n_up = _input_count(up_id, plan, stats)
    n_f = _input_count(f_id, plan, stats)
    sel = n_f / n_up if n_up else 1.0
    before = mu.predict(n_in) + mf.predict(n_up)
    after = math.fsum(mf.predict(n) for n in n_ins) + mu.predict(sel * n_in)
    gain = before - after
    rewrite.predicted_gain_ms = gain
    rewrite.recommended = gain > threshold
    return gain


def fit_models_from_runs(plan: Plan, runs: Sequence[ProfileStats], degree: int = 2) -> dict[str, PolyCostModel]:
    """One model per node from (input count, time) pairs across profiled runs.

    Nodes lacking counts or enough distinct input sizes are skipped.
    """
    models = {}
    for n in plan.nodes:
        samples = []
        for run in runs:
            try:
                samples.append((math.fsum(_input_count(i, plan, run) for i in n.inputs), run.time(n.id)))
            except MissingStat:
                break
        else:
            try:
                models[n.id] = fit_cost_model(samples, degree)
            except (Underdetermined, SingularFit):
                pass
    return models

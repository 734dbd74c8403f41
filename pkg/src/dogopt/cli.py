"""Command-line front end.

Exit codes: 0 success, 1 analysis findings (rewrites or prunable attributes),
2 usage or input errors. Reports go to stdout (or ``--out``), diagnostics to
stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import cache, prune, reorder
from .dog import build_dog
from .errors import DogoptError, MissingModel, MissingStat
from .executor import load_dataset, run_plan, save_dataset
from .plan import load_plan, plan_to_dict
from .profile import merge_runs, parse_profile, stages_for
from .replay import simulate_with_cache

log = logging.getLogger("dogopt")

OK, FINDINGS, ERROR = 0, 1, 2


class UsageError(Exception):
    pass


def _clean(obj):
    """JSON-safe copy: NaN/inf become null, numpy scalars become Python numbers."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def _text(obj, indent=0) -> list[str]:
    pad = "  " * indent
    lines = []
    if isinstance(obj, dict):
        for k in sorted(obj):
            v = obj[k]
            if isinstance(v, (dict, list)) and v:
                lines.append(f"{pad}{k}:")
                lines.extend(_text(v, indent + 1))
            else:
                lines.append(f"{pad}{k}: {json.dumps(v)}")
    elif isinstance(obj, list):
        for v in obj:
            if isinstance(v, dict):
                body = ", ".join(f"{k}={json.dumps(v[k])}" for k in sorted(v))
                lines.append(f"{pad}- {body}")
            else:
                lines.append(f"{pad}- {json.dumps(v)}")
    else:
        lines.append(f"{pad}{json.dumps(obj)}")
    return lines


def _emit(args, payload) -> None:
    payload = _clean(payload)
    if args.format == "json":
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    else:
        text = "\n".join(_text(payload)) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


# --------------------------------------------------------------------------
# shared loading


def _plan(args):
    if not args.plan:
        raise UsageError("--plan is required")
    return load_plan(args.plan)


def _runs(args, dog):
    if not args.profile:
        return []
    return [parse_profile(p, dog) for p in args.profile]


def _stats(args, dog):
    runs = _runs(args, dog)
    if not runs:
        raise UsageError("--profile is required for this command")
    stats = merge_runs(runs)
    if args.budget_bytes is not None:
        stats = stats.with_budget(args.budget_bytes)
    return stats


def _cache_section(args, plan):
    dog = build_dog(plan)
    stats = _stats(args, dog)
    stages = stages_for(dog, stats)
    result = cache.optimize_cache(dog, stages, stats, max_paths=args.max_paths, lp_tol=args.lp_tol)
    return dog, stats, stages, result, {
        "schedule": [s.id for s in stages],
        "budget_bytes": stats.store_budget,
        "directives": cache.emit_cache_plan(result.matrix, stages),
        "gain": result.report.to_dict(),
        "matrix": result.matrix.to_dict(),
        "warnings": result.report.warnings,
    }


def _reorder_section(args, plan):
    final, trace = reorder.rewrite_trace(plan)
    runs = []
    if args.profile:
        runs = [parse_profile(p) for p in args.profile]
    stats = merge_runs(runs) if runs else None
    models = reorder.fit_models_from_runs(plan, runs, args.degree) if runs else {}
    out = []
    for before, rw in trace:
        if stats is not None:
            try:
                reorder.evaluate_rewrite(rw, models, stats, before)
            except (MissingModel, MissingStat) as exc:
                log.info("rewrite %s left unevaluated: %s", rw.nodes, exc)
        out.append(rw.to_dict())
    return {
        "rewrites": out,
        "blocked": [r.to_dict() for r in reorder.blocked_pushdowns(plan)],
        "models": {k: m.to_dict() for k, m in sorted(models.items())},
        "rewritten_plan": plan_to_dict(final) if trace else None,
    }


def _prune_section(plan):
    report = prune.analyze(plan)
    return {"prunable": report.to_list()}


# --------------------------------------------------------------------------
# commands


def cmd_validate(args) -> int:
    plan = _plan(args)
    dog = build_dog(plan)
    _emit(args, {
        "valid": True,
        "nodes": len(dog.nodes),
        "edges": sorted([a, b] for a, b in dog.edges),
        "targets": dict(dog.targets),
        "outputs": dict(plan.outputs),
        "findings": [],
    })
    return OK


def cmd_ged(args) -> int:
    plan = _plan(args)
    dog = build_dog(plan)
    stages = stages_for(dog, _stats(args, dog))
    table = cache.compute_ged(dog, stages)
    body = table.to_dict(dog.operators)
    body["candidates"] = [sorted(c, key=dog.index.__getitem__) for c in cache.all_candidates(table)]
    _emit(args, body)
    return OK


def cmd_cache_plan(args) -> int:
    _, _, _, _, body = _cache_section(args, _plan(args))
    body["seed"] = args.seed
    _emit(args, body)
    return OK


def cmd_reorder(args) -> int:
    body = _reorder_section(args, _plan(args))
    _emit(args, body)
    return FINDINGS if body["rewrites"] else OK


def cmd_prune(args) -> int:
    body = _prune_section(_plan(args))
    _emit(args, body)
    return FINDINGS if body["prunable"] else OK


def cmd_run(args) -> int:
    plan = _plan(args)
    inputs = {}
    for spec in args.data or []:
        name, sep, path = spec.partition("=")
        if not sep:
            raise UsageError(f"--data expects name=path, got {spec!r}")
        if name not in plan.datasets:
            raise UsageError(f"plan has no dataset {name!r}")
        inputs[name] = load_dataset(path, plan.datasets[name])
    outputs = run_plan(plan, inputs)
    if args.out and Path(args.out).suffix == "":
        target = Path(args.out)
        target.mkdir(parents=True, exist_ok=True)
        for name, data in outputs.items():
            save_dataset(data, target / f"{name}.jsonl")
        sys.stderr.write(f"wrote {len(outputs)} output(s) to {target}\n")
        return OK
    _emit(args, {name: {"schema": list(d.schema), "rows": d.rows} for name, d in outputs.items()})
    return OK


def cmd_simulate(args) -> int:
    plan = _plan(args)
    dog = build_dog(plan)
    stats = _stats(args, dog)
    stages = stages_for(dog, stats)
    if args.cache_plan:
        doc = json.loads(Path(args.cache_plan).read_text())
        doc = doc.get("matrix", doc)
        W = cache.CacheMatrix.zeros(dog, stages)
        if list(doc["columns"]) != list(W.columns) or list(doc["steps"]) != list(W.steps):
            raise UsageError("cache matrix does not match this plan's nodes and schedule")
        W.values[:] = np.array(doc["values"], dtype=np.int8)
    else:
        W = cache.optimize_cache(dog, stages, stats, max_paths=args.max_paths, lp_tol=args.lp_tol).matrix
    replay = simulate_with_cache(dog, stages, stats, W, max_paths=args.max_paths)
    baseline = simulate_with_cache(dog, stages, stats, cache.CacheMatrix.zeros(dog, stages), max_paths=args.max_paths)
    predicted = math.fsum(cache.expected_stage_cost(dog, s, stats, W, args.max_paths) for s in stages)
    _emit(args, {
        "replay": replay.to_dict(),
        "predicted_total_ms": predicted,
        "nocache_total_ms": baseline.total,
        "saved_ms": baseline.total - replay.total,
    })
    return OK


def cmd_report(args) -> int:
    plan = _plan(args)
    body = {"seed": args.seed}
    body["cache"] = _cache_section(args, plan)[4] if args.profile else None
    body["reorder"] = _reorder_section(args, plan)
    body["prune"] = _prune_section(plan)
    _emit(args, body)
    return FINDINGS if body["reorder"]["rewrites"] or body["prune"]["prunable"] else OK


COMMANDS = {
    "validate": cmd_validate,
    "ged": cmd_ged,
    "cache-plan": cmd_cache_plan,
    "reorder": cmd_reorder,
    "prune": cmd_prune,
    "run": cmd_run,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--plan", help="plan JSON file")
    common.add_argument("--profile", action="append", help="profile JSON file (repeat to merge runs)")
    common.add_argument("--budget-bytes", type=float, dest="budget_bytes", help="override the store budget")
    common.add_argument("--out", help="write the report here instead of stdout")
    common.add_argument("--format", choices=("json", "text"), default="json")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--max-paths", type=int, dest="max_paths", help="path enumeration cap")
    common.add_argument("--lp-tol", type=float, default=1e-9, dest="lp_tol")
    common.add_argument("--degree", type=int, default=2, help="cost model polynomial degree (0-4)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="dogopt", description="Dataflow graph cache, reorder and prune advisor")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "run":
            p.add_argument("--data", action="append", help="dataset as name=path (.jsonl/.ndjson/.csv)")
        if name == "simulate":
            p.add_argument("--cache-plan", dest="cache_plan", help="cache-plan JSON to replay")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s: %(message)s")
    if args.seed < 0:
        parser.error("--seed must be non-negative")
    if not 0 <= args.degree <= 4:
        parser.error("--degree must be between 0 and 4")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, DogoptError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

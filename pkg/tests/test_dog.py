import json

import pytest
from hypothesis import given, settings

from dogopt.dog import (
    build_dog,
    count_paths,
    derive_stages,
    dog_from_edges,
    infer_targets,
    order_stages,
    paths,
    stage_dependencies,
    stage_members,
)
from dogopt.errors import (
    ArityError,
    CycleError,
    MissingTarget,
    OrderViolation,
    PathExplosion,
    PlanError,
    SchemaError,
    UnknownAttribute,
    UnknownReference,
)
from dogopt.plan import dump_plan, parse_plan
from dogopt.workloads import reviews_plan
from generators import random_cache_instance, seeds

REVIEW_SCHEDULE = [("v2", 0), ("v4", 1), ("v6", 2), ("v8", 3), ("v9", 4), ("v11", 5), ("v12", 6)]


def single_map():
    return parse_plan({"datasets": {"x": ["a"]}, "nodes": [{"id": "m", "kind": "Map", "inputs": ["x"], "expr": "out.a = in.a"}]})


def test_reviews_graph_has_fourteen_nodes():
    dog = build_dog(reviews_plan())
    assert len(dog.nodes) == 14
    assert dog.source == "v0" and dog.sink == "v13"
    assert ("v0", "v1") in dog.edges and ("v0", "v3") in dog.edges
    assert dog.pred["v13"] == ["v12"]
    assert sorted(dog.pred["v8"]) == ["v2", "v7"]


def test_single_map_is_a_chain():
    dog = build_dog(single_map())
    assert dog.edges == {("source", "m"), ("m", "sink")}
    assert dog.targets == {"s0": "m"}


def test_cycle_rejected():
    doc = {
        "datasets": {"x": ["a"]},
        "nodes": [
            {"id": "v1", "kind": "Map", "inputs": ["v2"], "expr": "out.a = in.a"},
            {"id": "v2", "kind": "Map", "inputs": ["v1"], "expr": "out.a = in.a"},
        ],
    }
    with pytest.raises(CycleError):
        parse_plan(doc)
    with pytest.raises(CycleError):
        dog_from_edges([("a", "b"), ("b", "a")])


def test_arity_and_schema_errors():
    with pytest.raises(ArityError):
        parse_plan({"datasets": {"x": ["a"]}, "nodes": [{"id": "s", "kind": "Set", "inputs": ["x"]}]})
    with pytest.raises(SchemaError):
        parse_plan({"datasets": {"x": ["a"], "y": ["b"]}, "nodes": [{"id": "s", "kind": "Set", "inputs": ["x", "y"]}]})
    with pytest.raises(SchemaError):
        parse_plan(
            {"datasets": {"x": ["a", "k"], "y": ["b"]}, "nodes": [{"id": "j", "kind": "Join", "inputs": ["x", "y"], "key": ["k"]}]}
        )
    with pytest.raises(UnknownAttribute):
        parse_plan({"datasets": {"x": ["a"]}, "nodes": [{"id": "f", "kind": "Filter", "inputs": ["x"], "expr": "in.zz > 1"}]})
    with pytest.raises(UnknownReference):
        parse_plan({"datasets": {"x": ["a"]}, "nodes": [{"id": "f", "kind": "Filter", "inputs": ["nope"], "expr": "in.a > 1"}]})


def test_unknown_fields_rejected():
    with pytest.raises(PlanError):
        parse_plan({"datasets": {}, "nodes": [], "extra": 1})
    with pytest.raises(PlanError):
        parse_plan({"datasets": {"x": ["a"]}, "nodes": [{"id": "m", "kind": "Map", "inputs": ["x"], "expr": "out.a = in.a", "color": "red"}]})


def test_shared_targets_rejected():
    doc = json.loads(dump_plan(single_map()))
    doc["targets"] = {"s0": "m", "s1": "m"}
    with pytest.raises(PlanError):
        parse_plan(doc)


def test_review_stages():
    dog = build_dog(reviews_plan())
    stages = derive_stages(dog, REVIEW_SCHEDULE)
    assert [s.id for s in stages] == ["s0", "s2", "s1", "s3", "s4", "s5", "s6"]
    assert [s.sched_order for s in stages] == list(range(7))
    s3 = stages[3]
    assert s3.members == {"v0", "v1", "v2", "v5", "v6", "v7", "v8"}
    assert s3.pred == "s1" and stages[0].pred is None


def test_single_stage_chain():
    dog = dog_from_edges([("a", "b"), ("b", "c")])
    (st,) = derive_stages(dog, {"s0": 0.0})
    assert st.members == {"source", "a", "b", "c"}


def test_schedule_contradicting_dependency():
    dog = build_dog(reviews_plan())
    bad = dict(REVIEW_SCHEDULE)
    bad["v8"], bad["v6"] = 1.5, 3  # s3 reads v6 (target of s1) but runs first
    with pytest.raises(OrderViolation):
        derive_stages(dog, list(bad.items()))


def test_missing_target_and_submit_time():
    dog = dog_from_edges([("a", "b")], targets={"s0": "a"})
    with pytest.raises(MissingTarget):
        order_stages(dog, {"s0": 0})
    dog = dog_from_edges([("a", "b")], targets={"s0": "b"})
    with pytest.raises(MissingTarget):
        order_stages(dog, {})


def test_equal_submit_times_warn(caplog):
    dog = dog_from_edges([("a", "c"), ("b", "d")], targets={"s1": "c", "s0": "d"})
    stages = order_stages(dog, {"s0": 1.0, "s1": 1.0})
    assert [s.id for s in stages] == ["s0", "s1"]
    assert "tie" in caplog.text


def test_infer_targets_marks_shuffles_and_terminals():
    plan = reviews_plan()
    dog = build_dog(plan)
    inferred = set(infer_targets(dog).values())
    assert inferred == {"v2", "v4", "v8", "v9", "v11", "v12"}


def test_paths_basics():
    dog = dog_from_edges([("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")])
    assert paths(dog, "b", "b") == [("b",)]
    assert set(paths(dog, "a", "d")) == {("a", "b", "d"), ("a", "c", "d")}
    assert paths(dog, "d", "a") == []


def test_path_explosion():
    # complete layered graph: 6 layers of width 10 between s and t -> 10**6 paths
    width, depth = 10, 6
    layers = [["s"]] + [[f"l{i}_{j}" for j in range(width)] for i in range(depth)] + [["t"]]
    edges = [(a, b) for up, down in zip(layers, layers[1:]) for a in up for b in down]
    dog = dog_from_edges(edges, targets={"s0": "t"})
    assert count_paths(dog, "s", "t") == width**depth
    with pytest.raises(PathExplosion) as info:
        paths(dog, "s", "t")
    assert info.value.count == 10**6 and info.value.cap == 100_000
    assert len(paths(dog, "l5_0", "t")) == 1


def test_max_paths_env_fallback(monkeypatch):
    dog = dog_from_edges([("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")])
    monkeypatch.setenv("DOGOPT_MAX_PATHS", "1")
    with pytest.raises(PathExplosion):
        paths(dog, "a", "d")
    assert len(paths(dog, "a", "d", max_paths=2)) == 2


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_members_are_union_of_source_paths(seed):
    inst = random_cache_instance(seed)
    dog = inst.dog
    for st in inst.stages:
        via_paths = {v for p in paths(dog, dog.source, st.target) for v in p}
        assert stage_members(dog, st.target) == via_paths == st.members


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_stage_order_is_topological(seed):
    inst = random_cache_instance(seed)
    rank = {s.id: s.sched_order for s in inst.stages}
    for producer, consumer in stage_dependencies(inst.stages):
        assert rank[producer] < rank[consumer]


def test_round_trip():
    plan = reviews_plan()
    again = parse_plan(dump_plan(plan))
    assert again == plan
    a, b = build_dog(plan), build_dog(again)
    assert (a.nodes, a.edges, a.targets) == (b.nodes, b.edges, b.targets)

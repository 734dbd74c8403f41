import json

import pytest

from dogopt.cli import main
from dogopt.workloads import path

PLAN = str(path("reviews_plan.json"))
PROFILE = str(path("reviews_profile.json"))
ATTRS = str(path("review_attrs_plan.json"))


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_validate(capsys):
    code, out, _ = run(capsys, "validate", "--plan", PLAN)
    body = json.loads(out)
    assert code == 0 and body["valid"] and body["nodes"] == 14


def test_ged_and_candidates(capsys):
    code, out, _ = run(capsys, "ged", "--plan", PLAN, "--profile", PROFILE)
    body = json.loads(out)
    assert code == 0
    assert body["candidates"][2] == ["v2", "v4", "v6"]
    col = body["columns"].index("v2")
    assert [row[col] for row in body["rows"][:4]] == [5, 3, 1, 0]


def test_cache_plan(capsys, tmp_path):
    target = tmp_path / "plan.json"
    code, out, _ = run(capsys, "cache-plan", "--plan", PLAN, "--profile", PROFILE, "--out", str(target))
    body = json.loads(target.read_text())
    assert code == 0 and out == ""
    assert body["gain"]["F"] == 11670.0
    assert body["gain"]["F"] <= body["gain"]["L"] + 1e-9
    assert all({"node", "persist_after_stage", "unpersist_after_stage"} == d.keys() for d in body["directives"])
    # the saved plan replays to the predicted cost
    code, out, _ = run(capsys, "simulate", "--plan", PLAN, "--profile", PROFILE, "--cache-plan", str(target))
    sim = json.loads(out)
    assert sim["replay"]["total_ms"] == sim["predicted_total_ms"]
    assert sim["saved_ms"] == pytest.approx(11670.0)


def test_zero_budget_override(capsys):
    code, out, _ = run(capsys, "cache-plan", "--plan", PLAN, "--profile", PROFILE, "--budget-bytes", "0")
    body = json.loads(out)
    assert body["gain"]["F"] == 0.0 and body["directives"] == []


def test_prune_exit_code_and_report(capsys):
    code, out, _ = run(capsys, "prune", "--plan", ATTRS)
    items = json.loads(out)["prunable"]
    assert code == 1
    assert {(i["op"], i["attribute"]) for i in items} >= {("reviews", "attr_3"), ("g", "val.attr_3")}


def test_reorder_without_profile(capsys):
    code, out, _ = run(capsys, "reorder", "--plan", PLAN)
    body = json.loads(out)
    assert code in (0, 1)
    for rw in body["rewrites"]:
        assert rw["safe"] and rw["witness"] == [] and rw["predicted_gain_ms"] is None


def test_run_on_files(capsys, tmp_path):
    data = tmp_path / "reviews.jsonl"
    data.write_text(
        "\n".join(
            json.dumps(r)
            for r in [
                {"attr_0": "B1", "attr_1": "a", "attr_2": 4, "attr_3": "x"},
                {"attr_0": "B1", "attr_1": "b", "attr_2": 1, "attr_3": "y"},
            ]
        )
    )
    code, out, _ = run(capsys, "run", "--plan", ATTRS, "--data", f"reviews={data}")
    assert code == 0
    assert json.loads(out)["totals"]["rows"] == [{"attr_0": "B1", "total": 5}]


def test_text_format(capsys):
    code, out, _ = run(capsys, "prune", "--plan", ATTRS, "--format", "text")
    assert code == 1 and "attr_3" in out and not out.lstrip().startswith("{")


@pytest.mark.parametrize(
    "argv",
    [
        ["validate", "--plan", "/nonexistent/plan.json"],
        ["validate"],
        ["cache-plan", "--plan", PLAN],
        ["run", "--plan", ATTRS, "--data", "nope"],
    ],
)
def test_errors_exit_two(capsys, argv):
    code, out, err = run(capsys, *argv)
    assert code == 2 and out == "" and err.strip()


def test_malformed_plan(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"datasets": {"x": ["a"]}, "nodes": [{"id": "m", "kind": "Map", "inputs": ["m"]}]}')
    code, _, err = run(capsys, "validate", "--plan", str(bad))
    assert code == 2 and "error" in err.lower()

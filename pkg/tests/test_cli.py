import json
from pathlib import Path

import pytest

from synthloop.cli import dispatch


@pytest.fixture
def sim_toml(sim_dataset, tmp_path):
    out = tmp_path / "out"
    text = f"""
[run]
iterations = 1
batch = 10
scorer = "loss_self"
replicate_seeds = [1]
output_dir = "{out}"

[selection]
strategy = "argmax"
direction = "high"

[paths]
seed = "{sim_dataset / 'seed.jsonl'}"
validation = "{sim_dataset / 'val.jsonl'}"
test = "{sim_dataset / 'test.jsonl'}"

[sim]
seed = 7

[finetune]
epochs = 2
"""
    path = tmp_path / "sim.toml"
    path.write_text(text, encoding="utf-8")
    return path, out


def test_dry_run_prints_plan_without_side_effects(sim_toml, capsys):
    config_path, out = sim_toml
    code = dispatch(["run", "--config", str(config_path), "--dry-run"])
    captured = capsys.readouterr()
    assert code == 0
    plan = json.loads(captured.out)
    assert plan["iterations"] == 1
    assert not out.exists()


def test_missing_config_exits_one_with_path(capsys):
    code = dispatch(["run", "--config", "/nowhere/missing.toml", "--dry-run"])
    captured = capsys.readouterr()
    assert code == 1
    error = json.loads(captured.err)
    assert "missing.toml" in error["message"]


def test_unknown_verb_usage_error(capsys):
    assert dispatch(["frobnicate"]) == 1


def test_run_and_analyze_round_trip(sim_toml, tmp_path, capsys):
    config_path, out = sim_toml
    assert dispatch(["run", "--config", str(config_path)]) == 0
    capsys.readouterr()
    assert (out / "manifest.json").exists()

    reports = tmp_path / "reports"
    code = dispatch(["analyze", str(out / "manifest.json"), "--out", str(reports)])
    captured = capsys.readouterr()
    assert code == 0
    listed = captured.out.strip().splitlines()
    assert len(listed) >= 5
    for line in listed:
        assert Path(line).exists()


def test_analyze_empty_manifest_list_exits_one(capsys):
    assert dispatch(["analyze"]) == 1
    error = json.loads(capsys.readouterr().err)
    assert "manifest" in error["message"]


def test_analyze_unwritable_out_dir_names_path(sim_toml, tmp_path, capsys):
    config_path, out = sim_toml
    assert dispatch(["run", "--config", str(config_path)]) == 0
    capsys.readouterr()
    blocker = tmp_path / "blocker"
    blocker.write_text("a file, not a directory")
    code = dispatch(["analyze", str(out / "manifest.json"), "--out", str(blocker)])
    captured = capsys.readouterr()
    assert code == 1
    assert "blocker" in json.loads(captured.err)["message"]


def test_budget_cap_exits_two_and_leaves_resumable_manifest(sim_toml, capsys):
    config_path, out = sim_toml
    code = dispatch([
        "run", "--config", str(config_path),
        "--set", "run.iterations=3", "--set", "budget.teacher=4000",
    ])
    captured = capsys.readouterr()
    assert code == 2
    assert json.loads(captured.err)["error"] == "BudgetExceededError"
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["replicates"]["1"]) >= 1


def test_seed_override_changes_only_seed_field(sim_toml, capsys):
    config_path, _ = sim_toml
    assert dispatch(["run", "--config", str(config_path), "--dry-run", "--seed", "11"]) == 0
    plan_a = json.loads(capsys.readouterr().out)
    assert dispatch(["run", "--config", str(config_path), "--dry-run", "--seed", "12"]) == 0
    plan_b = json.loads(capsys.readouterr().out)
    assert plan_a["config_hash"] != plan_b["config_hash"]
    resolved_a, resolved_b = plan_a["resolved"], plan_b["resolved"]
    assert resolved_a["run"]["replicate_seeds"] == [11]
    assert resolved_b["run"]["replicate_seeds"] == [12]
    resolved_a["run"].pop("replicate_seeds")
    resolved_b["run"].pop("replicate_seeds")
    assert resolved_a == resolved_b


def test_set_override_types(sim_toml, capsys):
    config_path, _ = sim_toml
    code = dispatch([
        "run", "--config", str(config_path), "--dry-run",
        "--set", "run.batch=25", "--set", "run.analysis_artifacts=false",
        "--set", "run.replicate_seeds=[4, 5]",
    ])
    plan = json.loads(capsys.readouterr().out)
    assert code == 0
    assert plan["resolved"]["run"]["batch"] == 25
    assert plan["resolved"]["run"]["analysis_artifacts"] is False
    assert plan["resolved"]["run"]["replicate_seeds"] == [4, 5]


def test_stage_verbs_score_select_generate_evaluate(sim_toml, tmp_path, capsys):
    config_path, _ = sim_toml
    stage_out = tmp_path / "stages"

    assert dispatch(["score", "--config", str(config_path), "--out", str(stage_out)]) == 0
    scores_path = Path(capsys.readouterr().out.strip())
    assert scores_path.exists()
    assert len(scores_path.read_text().splitlines()) == 200

    assert dispatch([
        "select", "--config", str(config_path), "--out", str(stage_out),
        "--scores", str(scores_path),
    ]) == 0
    selected_path = Path(capsys.readouterr().out.strip())
    selected = json.loads(selected_path.read_text())
    assert len(selected["ids"]) == 10

    assert dispatch([
        "generate", "--config", str(config_path), "--out", str(stage_out),
        "--selected", str(selected_path),
    ]) == 0
    synthetic_path = Path(capsys.readouterr().out.strip())
    assert len(synthetic_path.read_text().splitlines()) == 10

    assert dispatch(["evaluate", "--config", str(config_path)]) == 0
    result = json.loads(capsys.readouterr().out)
    assert 0.0 <= result["accuracy"] <= 1.0 and result["n"] == 100


def test_resume_verb(sim_toml, capsys):
    config_path, out = sim_toml
    assert dispatch(["run", "--config", str(config_path)]) == 0
    capsys.readouterr()
    assert dispatch(["resume", str(out)]) == 0
    assert "manifest" in capsys.readouterr().out


def test_run_resume_flag(sim_toml, capsys):
    config_path, out = sim_toml
    assert dispatch(["run", "--config", str(config_path)]) == 0
    capsys.readouterr()
    assert dispatch(["run", "--config", str(config_path), "--resume"]) == 0
    assert "manifest" in capsys.readouterr().out

#!/usr/bin/env python3
"""
Tests for the experiment config, run manifest, report aggregation and the
staged pipeline driven by a scripted proposal source
"""
import json
import sys
from pathlib import Path

import pytest

# Add project root to path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from drlab.core.builtin_rewards import builtin_reward_text
from drlab.errors import EmptyRun, MissingArtifact, TamperedArtifact, ValidationError
from drlab.pipeline import cli
from drlab.pipeline.config import load_experiment_config, parse_experiment_config
from drlab.pipeline.manifest import RunManifest
from drlab.pipeline.report import (
    PolicyResult,
    aggregate,
    aggregate_method,
    method_table,
    read_csv,
    rows_from_csv,
    write_csv,
)
from drlab.pipeline.stages import cmd_dr_train, cmd_eureka, cmd_report, run_pipeline

TINY_TRAIN = {"total_env_steps": 128, "num_parallel_envs": 2, "rollout_length": 64, "epochs_per_update": 1,
              "minibatch_size": 64}
REWARD = f"```reward\n{builtin_reward_text('sprint_cart', 'eureka_forward')}```\n"
# every interval contains the defaults, so clamping against any RAPP bound leaves it non-empty
DR = "```dr\nfriction: 0.9, 1.1\nmotor_strength: 0.75, 1.25\n```\n"


def write_experiment(directory: Path, **overrides) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "playbook.json").write_text(json.dumps({"reward": [REWARD] * 4, "dr": [DR] * 16}))
    config = {
        "env_id": "sprint_cart",
        "source": {"kind": "scripted", "playbook": "playbook.json"},
        "stages": ["eureka", "rapp", "dr-propose", "dr-train", "transfer-eval", "report"],
        "eureka": {"iterations": 1, "samples": 1, "eval_episodes": 1},
        "rapp": {"episodes_per_value": 1},
        "dr": {"m": 2, "methods": ["llm", "no_dr", "prompt_dr"]},
        "train": {"eureka": TINY_TRAIN, "final": TINY_TRAIN},
        "seeds": [0],
        "eval_episodes": 1,
    }
    config.update(overrides)
    path = directory / "config.json"
    path.write_text(json.dumps(config))
    return path


# --- config ---------------------------------------------------------------

def test_config_loads_with_defaults(tmp_path):
    config = load_experiment_config(write_experiment(tmp_path))
    assert config.pipeline_seed == 0
    assert config.dr.validation_policy == "clamp"
    assert config.resolve("playbook.json") == tmp_path / "playbook.json"
    assert "base_dir" not in config.snapshot()


def test_config_validation(tmp_path):
    with pytest.raises(ValidationError):
        load_experiment_config(write_experiment(tmp_path / "a", seeds=[]))
    with pytest.raises(ValidationError):
        load_experiment_config(write_experiment(tmp_path / "b", stages=["eureka", "deploy"]))
    with pytest.raises(ValidationError):
        load_experiment_config(write_experiment(tmp_path / "c", unexpected=1))
    with pytest.raises(ValidationError):
        load_experiment_config(tmp_path / "missing.json")


def test_config_missing_playbook(tmp_path):
    data = json.loads(write_experiment(tmp_path).read_text())
    data["source"]["playbook"] = "nowhere.json"
    with pytest.raises(ValidationError):
        parse_experiment_config(data, base_dir=tmp_path)


def test_config_with_environment_document(tmp_path):
    shipped = project_root / "experiments" / "sprint_cart_matrix" / "target_world.json"
    (tmp_path / "world.json").write_text(shipped.read_text())
    config = load_experiment_config(write_experiment(tmp_path, environment="world.json"))
    spec, target = config.load_environment()
    assert spec.env_id == "sprint_cart"
    assert target.target_assignment["friction"] == 2.5


# --- manifest -------------------------------------------------------------

def test_manifest_verifies_artifacts(tmp_path):
    artifact = tmp_path / "stage" / "out.txt"
    artifact.parent.mkdir()
    artifact.write_text("v1")
    manifest = RunManifest.open(tmp_path, {"k": 1})
    manifest.record_stage(tmp_path, "stage", 0.0, {"out": [artifact]})

    reopened = RunManifest.open(tmp_path)
    assert reopened.run_id == manifest.run_id
    assert reopened.require(tmp_path, "out") == [artifact]
    assert list(reopened.artifact_hashes()) == ["stage/out.txt"]

    with pytest.raises(MissingArtifact):
        reopened.require(tmp_path, "other")
    artifact.write_text("v2")
    with pytest.raises(TamperedArtifact):
        reopened.require(tmp_path, "out")
    artifact.unlink()
    with pytest.raises(MissingArtifact):
        reopened.require(tmp_path, "out")


# --- report aggregation ---------------------------------------------------

def result(method, config, seed, fitness, status="ok"):
    metrics = {"fitness": fitness} if status == "ok" else {}
    return PolicyResult(method, config, seed, metrics, status, None if status == "ok" else "diverged")


def test_best_and_average_rows():
    # seed-means per config: 3, 1, 2
    results = [
        result("llm", 0, 0, 2.0), result("llm", 0, 1, 4.0),
        result("llm", 1, 0, 1.0), result("llm", 1, 1, 1.0),
        result("llm", 2, 0, 1.0), result("llm", 2, 1, 3.0),
    ]
    best, average = aggregate_method("llm", results)
    assert best.aggregate == "best" and best.notes == ["config 0"]
    assert best.mean["fitness"] == 3.0
    assert best.std["fitness"] == 1.0
    assert average.mean["fitness"] == pytest.approx(2.0)
    # per-seed averages over configs are 4/3 and 8/3
    assert average.std["fitness"] == pytest.approx(2.0 / 3.0)
    assert best.mean["velocity"] is None


def test_best_config_tie_goes_to_lowest_index():
    best, _ = aggregate_method("m", [result("m", 1, 0, 5.0), result("m", 0, 0, 5.0)])
    assert best.notes == ["config 0"]


def test_single_config_and_failures():
    (row,) = aggregate_method("no_dr", [result("no_dr", 0, 0, 1.0), result("no_dr", 0, 1, 0.0, "failed")])
    assert row.aggregate == "single"
    assert row.failed == 1
    assert row.label == "no_dr"
    (row,) = aggregate_method("x", [result("x", 0, 0, 0.0, "failed")])
    assert row.configs == 0 and row.mean == {}


def test_rows_sorted_and_rendered(tmp_path):
    rows = aggregate([
        result("no_dr", 0, 0, 1.0),
        result("llm", 0, 0, 5.0), result("llm", 1, 0, 3.0),
        result("broken", 0, 0, 0.0, "failed"),
    ])
    assert [r.label for r in rows] == ["llm (best)", "llm (average)", "no_dr", "broken"]
    table = method_table(rows)
    assert "| llm (best) | 5.000 ± 0.000 |" in table
    assert "n/a" in table

    write_csv(tmp_path / "summary.csv", [r.row() for r in rows])
    again = rows_from_csv(read_csv(tmp_path / "summary.csv"))
    assert [(r.method, r.aggregate, r.mean["fitness"]) for r in again] == \
           [(r.method, r.aggregate, r.mean.get("fitness")) for r in rows]


# --- stages ---------------------------------------------------------------

ALL_STAGES = ["eureka", "rapp", "dr-propose", "dr-train", "transfer-eval", "baseline", "report"]
TINY_CEM = {"kinds": ["cem_rapp"], "cem_iterations": 1, "cem_samples": 2, "cem_elite": 1}


def stage_hashes(manifest):
    return {rec.path: rec.sha256 for stage in manifest.stages.values()
            for recs in stage.artifacts.values() for rec in recs}


def test_tiny_pipeline_is_deterministic(tmp_path):
    config = load_experiment_config(write_experiment(tmp_path / "exp", stages=ALL_STAGES, baselines=TINY_CEM))
    first = run_pipeline(config, tmp_path / "run_a")
    second = run_pipeline(config, tmp_path / "run_b")
    assert set(first.stages) == {"eureka", "rapp", "dr-propose", "dr-train", "transfer-eval",
                                 "baseline-cem_rapp", "report"}
    hashes = stage_hashes(first)
    assert "baseline/cem_rapp/history.csv" in hashes
    assert "report/report.md" in hashes
    assert hashes == stage_hashes(second)
    assert (tmp_path / "run_a" / "baseline" / "cem_rapp" / "timings.csv").exists()

    index = json.loads((tmp_path / "run_a" / "dr" / "configs.json").read_text())
    assert len(index["llm"]["configs"]) == 2
    assert len(index["no_dr"]["configs"]) == 1
    report = (tmp_path / "run_a" / "report" / "report.md").read_text()
    assert "## Reward search" in report
    assert "## Target-world transfer" in report
    assert "no_dr" in report


def test_tampered_reward_stops_training(tmp_path):
    config = load_experiment_config(write_experiment(
        tmp_path / "exp", stages=["eureka", "rapp", "dr-propose"]))
    run_dir = tmp_path / "run"
    run_pipeline(config, run_dir)
    reward = run_dir / "eureka" / "reward.rwd"
    reward.write_text(reward.read_text() + "component extra = 1.0\n")
    with pytest.raises(TamperedArtifact):
        cmd_dr_train(config, run_dir)


def test_report_with_only_the_reward_search(tmp_path):
    config = load_experiment_config(write_experiment(tmp_path / "exp"))
    run_dir = tmp_path / "run"
    cmd_eureka(config, run_dir)
    cmd_report(run_dir)
    report = (run_dir / "report" / "report.md").read_text()
    assert "## Reward search" in report
    assert "## Target-world transfer" not in report


def test_report_on_an_empty_run(tmp_path):
    with pytest.raises(EmptyRun):
        cmd_report(tmp_path)


def test_cli_exit_codes(tmp_path):
    config_path = write_experiment(tmp_path / "exp")
    assert cli.main(["eureka", "--config", str(tmp_path / "nope.json"), "--run-dir", str(tmp_path / "r1")]) == 2
    assert cli.main(["rapp", "--config", str(config_path), "--run-dir", str(tmp_path / "r2")]) == 3
    assert cli.main(["report", "--run-dir", str(tmp_path / "r3")]) == 3
    assert cli.main(["eureka", "--config", str(config_path), "--run-dir", str(tmp_path / "r4")]) == 0
    assert (tmp_path / "r4" / "eureka" / "reward.rwd").exists()
    assert (tmp_path / "r4" / "drlab.log").exists()


def test_cem_baseline_stage(tmp_path):
    config = load_experiment_config(write_experiment(
        tmp_path / "exp", stages=["eureka", "rapp", "baseline", "report"],
        baselines={"kinds": ["cem_rapp"], "cem_iterations": 1, "cem_samples": 2, "cem_elite": 1}))
    run_dir = tmp_path / "run"
    manifest = run_pipeline(config, run_dir)
    assert "baseline-cem_rapp" in manifest.stages
    out = run_dir / "baseline" / "cem_rapp"
    assert len((out / "history.csv").read_text().splitlines()) == 3
    assert json.loads((out / "best_config.json").read_text())["provenance"] == "cem"
    assert "cem_rapp" in (run_dir / "report" / "report.md").read_text()

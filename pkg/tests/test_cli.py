import json
from pathlib import Path

import pytest

from smallgrasp.cli import CliError, _inside, config_hash, main

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def read_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_simulate_single_sphere_end_to_end(tmp_path, capsys):
    out = tmp_path / "run"
    argv = ["simulate", "--scenario", str(SCENARIOS / "single_sphere.json"), "--episodes", "1",
            "--seed", "7", "--out", str(out)]
    assert main(argv) == 0
    lines = (out / "reports.jsonl").read_text().splitlines()
    assert len(lines) == 1
    rep = json.loads(lines[0])
    assert rep["outcome"] == "sorted(12)" and rep["seed"] and rep["config_hash"]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["attempts"] == 1 and summary["successful_grasps"] == 1
    assert summary["seed"] == 7
    trace = (out / rep["trace"]).read_text().splitlines()
    assert all(json.loads(t)["config_hash"] == rep["config_hash"] for t in trace)
    first = read_bytes(out)
    assert main(argv) == 0
    assert read_bytes(out) == first


def test_missing_scenario_names_the_path(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert main(["simulate", "--scenario", str(missing), "--out", str(tmp_path)]) != 0
    assert str(missing) in capsys.readouterr().err


def test_dataset_train_eval_roundtrip(tmp_path, capsys):
    out = tmp_path / "ds"
    base = ["--out", str(out), "--seed", "3"]
    assert main(["dataset", "--classes", "10,14", "--presses", "2", "--frames", "3",
                 "--two-object-presses", "1", *base]) == 0
    manifest = json.loads((out / "dataset" / "manifest.json").read_text())
    assert len(manifest["samples"]) == 2 * 2 * 3 + 3
    assert manifest["per_class_counts"][20] == 3 and manifest["seed"] == 3
    assert manifest["config_hash"]
    first = (out / "dataset" / "manifest.json").read_bytes()
    assert main(["dataset", "--classes", "10,14", "--presses", "2", "--frames", "3",
                 "--two-object-presses", "1", *base]) == 0
    assert (out / "dataset" / "manifest.json").read_bytes() == first

    assert main(["eval", *base]) != 0
    assert "model not found" in capsys.readouterr().err

    assert main(["train", *base]) == 0
    train_metrics = json.loads((out / "train_metrics.json").read_text())
    assert train_metrics["train_accuracy"] == 1.0
    assert main(["eval", *base]) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["seed"] == 3 and metrics["config_hash"]
    tested = sum(1 for s in manifest["samples"] if s["split"] == "test")
    assert sum(map(sum, metrics["matrix"])) == tested == metrics["total"]
    for cid in range(1, 23):
        n = sum(1 for s in manifest["samples"] if s["split"] == "test" and s["class_id"] == cid)
        assert sum(metrics["matrix"][cid - 1]) == n

    for name in ["model.npz", "metrics.json", "dataset/manifest.json"]:
        assert main(["inspect", str(out / name)]) == 0
    assert "magic" in capsys.readouterr().out


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("SMALLGRASP_OUT", str(tmp_path / "envout"))
    assert main(["dataset", "--classes", "12,14", "--frames", "1"]) == 0
    assert (tmp_path / "envout" / "dataset" / "manifest.json").exists()


def test_writes_stay_inside_the_output_dir(tmp_path):
    assert _inside(tmp_path, "a/b.json") == (tmp_path / "a" / "b.json").resolve()
    with pytest.raises(CliError):
        _inside(tmp_path, "../escape.json")
    assert main(["dataset", "--classes", "12,14", "--frames", "1", "--out", str(tmp_path),
                 "--dataset-dir", "../elsewhere"]) != 0


def test_bad_arguments(tmp_path):
    assert main(["simulate", "--episodes", "0", "--out", str(tmp_path)]) == 2
    scen = str(SCENARIOS / "single_sphere.json")
    assert main(["simulate", "--scenario", scen, "--controller-config",
                 str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 1


def test_config_hash_is_order_independent():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})

import json
import os
from pathlib import Path

import pandas as pd
import pytest

from backend.cli import run
from backend.services.dataset_service import load_features_csv
from backend.services.export_service import config_digest, load_json_document, read_header
from backend.services.pipeline_service import load_config


def _stderr_report(capsys):
    lines = [line for line in capsys.readouterr().err.splitlines() if line.startswith("{")]
    return json.loads(lines[-1])


def _read_all(directory):
    return {path.name: path.read_bytes() for path in sorted(Path(directory).iterdir())}


def test_extract_writes_every_feature_block(config_file, tmp_path):
    cfg = config_file()
    out = str(tmp_path / "out")
    assert run(["synth", "--config", cfg, "--out", out]) == 0
    assert run(["extract", "--config", cfg, "--out", out]) == 0
    features = load_features_csv(os.path.join(out, "features.csv"))
    assert features.n_features == 344
    assert features.n_rows == 12
    assert sum(n.startswith("pli:") for n in features.feature_names) == 120


def test_grid_csv_shape(config_file, tmp_path):
    cfg = config_file()
    out = str(tmp_path / "out")
    for command in ("synth", "extract", "grid"):
        assert run([command, "--config", cfg, "--out", out]) == 0
    frame = pd.read_csv(os.path.join(out, "grid.csv"), skiprows=1)
    assert frame.shape == (7, 5)
    assert list(frame.columns) == ["featureset", "none", "cfs", "infogain", "relieff"]
    grid = load_json_document(os.path.join(out, "grid.json"))["data"]
    assert len(grid["cells"]) == 7 * 4 * 2


def test_run_is_reproducible_and_parallel_safe(config_file, tmp_path):
    cfg = config_file()
    outputs = {}
    for name, workers in (("a", "1"), ("b", "1"), ("c", "2")):
        out = str(tmp_path / name)
        assert run(["run", "--config", cfg, "--out", out, "--workers", workers]) == 0
        outputs[name] = _read_all(out)
    assert outputs["a"] == outputs["b"]
    assert outputs["a"] == outputs["c"]


def test_run_writes_self_describing_outputs(config_file, tmp_path, capsys):
    cfg = config_file()
    out = str(tmp_path / "out")
    assert run(["run", "--config", cfg, "--out", out]) == 0
    printed = capsys.readouterr().out.split()
    expected = {"dataset.csv", "features.csv", "selection.json", "cv_report.json", "group_stats.csv",
                "edge_census.json", "connectivity_mean_MDD.csv", "connectivity_mean_NC.csv"}
    assert {os.path.basename(p) for p in printed} == expected
    assert set(os.listdir(out)) == expected

    digest = config_digest(load_config(cfg))
    for name in ("dataset.csv", "features.csv", "group_stats.csv"):
        header = read_header(os.path.join(out, name))
        assert header["digest"] == digest
        assert header["version"]
    report = load_json_document(os.path.join(out, "cv_report.json"))
    assert report["config_digest"] == digest
    assert report["schema"] == "eegdep.cv_report"
    assert [r["model"] for r in report["data"]["reports"]] == ["NB", "KNN"]


def test_missing_input_is_a_data_error(config_file, tmp_path, capsys):
    cfg = config_file()
    code = run(["extract", "--config", cfg, "--input", str(tmp_path / "missing.csv")])
    assert code == 3
    report = _stderr_report(capsys)
    assert report["error"] == "ParseError"
    assert report["operation"] == "extract"
    assert report["exit_code"] == 3


def test_invalid_worker_count_is_a_config_error(config_file, capsys):
    assert run(["synth", "--config", config_file(workers=0)]) == 2
    assert _stderr_report(capsys)["error"] == "ConfigError"
    assert run(["synth", "--config", config_file(), "--workers", "0"]) == 2


def test_missing_config_file(tmp_path, capsys):
    assert run(["synth", "--config", str(tmp_path / "nope.json")]) == 2
    assert _stderr_report(capsys)["context"]["path"].endswith("nope.json")


def test_non_numeric_seed_is_rejected(config_file):
    with pytest.raises(SystemExit) as e:
        run(["synth", "--config", config_file(), "--seed", "abc"])
    assert e.value.code == 2


def test_eval_without_features(config_file, tmp_path, capsys):
    assert run(["eval", "--config", config_file(), "--out", str(tmp_path / "empty")]) == 3
    assert _stderr_report(capsys)["operation"] == "eval"


def test_output_path_that_is_a_file(config_file, tmp_path, capsys):
    blocker = tmp_path / "taken"
    blocker.write_text("not a directory")
    assert run(["synth", "--config", config_file(), "--out", str(blocker)]) == 3
    report = _stderr_report(capsys)
    assert report["error"] == "DataError"
    assert report["operation"] == "synth"
    assert report["context"]["path"] == str(blocker)


@pytest.mark.slow
def test_synthetic_replication(tmp_path):
    config = {
        "seed": 1,
        "selection": {"method": "relieff", "n_select": 18},
        "models": [{"kind": "LR"}],
        "evaluation": {"featureset": "All"},
        "output_dir": str(tmp_path / "out"),
    }
    path = tmp_path / "replication.json"
    path.write_text(json.dumps(config))
    assert run(["run", "--config", str(path)]) == 0
    (report,) = load_json_document(str(tmp_path / "out" / "cv_report.json"))["data"]["reports"]
    assert report["metrics"]["accuracy"] >= 0.9
    counts = report["edge_census"]["counts"]
    assert counts["intra_left"] + counts["intra_right"] > counts["inter"]


@pytest.mark.slow
def test_pli_feature_sets_beat_linear_only(tmp_path):
    config = {
        "seed": 2,
        "dataset": {"synth": {"subjects_per_class": 8, "epochs_per_subject": 10}},
        "selection": {"method": "relieff", "n_select": 18},
        "models": [{"kind": "NB"}, {"kind": "KNN"}],
        "evaluation": {"mode": "grid", "selectors": ["none", "relieff"]},
        "output_dir": str(tmp_path / "out"),
    }
    path = tmp_path / "grid.json"
    path.write_text(json.dumps(config))
    assert run(["run", "--config", str(path)]) == 0
    table = load_json_document(str(tmp_path / "out" / "grid.json"))["data"]["table"]
    for tag in ("PLI", "L+PLI", "NL+PLI", "All"):
        assert table[tag]["relieff"]["mean"] >= table["L"]["relieff"]["mean"]
    assert table["PLI"]["none"]["mean"] >= table["L"]["none"]["mean"]


@pytest.mark.slow
def test_default_grid_rewards_pli_and_selection(tmp_path):
    config = {
        "seed": 1,
        "evaluation": {"mode": "grid"},
        "output_dir": str(tmp_path / "out"),
    }
    path = tmp_path / "grid.json"
    path.write_text(json.dumps(config))
    assert run(["run", "--config", str(path), "--workers", "4"]) == 0
    table = load_json_document(str(tmp_path / "out" / "grid.json"))["data"]["table"]
    for tag in ("PLI", "L+PLI", "NL+PLI", "All"):
        for selector in ("none", "cfs", "infogain", "relieff"):
            assert table[tag][selector]["mean"] >= table["L"][selector]["mean"]
    for selector in ("cfs", "infogain", "relieff"):
        assert table["All"][selector]["mean"] >= table["All"]["none"]["mean"] + 0.05

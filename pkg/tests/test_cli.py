import json
import os
import subprocess
import sys

import pytest

from p2cir.cli import main
from p2cir.oracle import import_labels

TRAIN_ARGS = ["--epochs", "1", "--runs", "1", "--hidden-dim", "8",
              "--num-layers", "1", "--layer-kind", "gcn", "--batch-size", "8"]


def run(argv):
    return main(argv)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    assert run(["gen", "--preset", "dfg", "--count", "14", "--seed", "5",
                "--out", str(root)]) == 0
    return root


@pytest.fixture(scope="module")
def model_dir(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("models")
    assert run(["train", "--dataset", str(dataset), "--out", str(out),
                "--target", "all", "--seed", "3", *TRAIN_ARGS]) == 0
    return out


def test_gen_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run(["gen", "--preset", "cdfg", "--count", "8", "--seed", "7",
                    "--out", str(out)]) == 0
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    assert ma["dataset_hash"] == mb["dataset_hash"]


def test_gen_writes_provenance(dataset):
    prov = json.loads((dataset / "provenance.json").read_text())
    assert prov["command"] == "gen"
    assert prov["seed"] == 5
    assert prov["config"]["preset"] == "dfg"


def test_label_matches_gen_labels(dataset, tmp_path):
    out = tmp_path / "labels.csv"
    assert run(["label", "--graphs", str(dataset / "graphs"),
                "--out", str(out)]) == 0
    assert import_labels(out) == import_labels(dataset / "labels.csv")


def test_stats_report_contents(dataset, tmp_path):
    out = tmp_path / "stats"
    assert run(["stats", "--dataset", str(dataset), "--out", str(out)]) == 0
    assert (out / "stats.csv").exists()
    assert (out / "hist_nodes.csv").exists()
    assert (out / "hist_nodes.png").exists()
    assert (out / "hist_loops.csv").exists()
    assert (out / "hist_loops.png").exists()
    header = (out / "stats.csv").read_text().splitlines()[0]
    assert header.startswith("name,kind,num_nodes")


def test_dataset_dir_from_environment(dataset, tmp_path, monkeypatch):
    monkeypatch.setenv("P2C_DATA_DIR", str(dataset))
    out = tmp_path / "stats-env"
    assert run(["stats", "--out", str(out)]) == 0


def test_missing_dataset_is_config_error(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("P2C_DATA_DIR", raising=False)
    assert run(["stats", "--out", str(tmp_path / "x")]) == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("config-error:")
    assert "\n" not in err


def test_train_outputs(model_dir):
    for target in ("dsp", "lut", "ff", "slice", "cp"):
        assert (model_dir / f"{target}.npz").exists()
        assert (model_dir / f"history_{target}.csv").exists()
        assert (model_dir / f"curve_{target}.png").exists()
    metrics = json.loads((model_dir / "metrics.json").read_text())
    assert set(metrics["mean_rel_err"]) == {"dsp", "lut", "ff", "slice", "cp"}


def test_eval_writes_metrics(dataset, model_dir, tmp_path):
    out = tmp_path / "eval"
    assert run(["eval", "--model", str(model_dir / "lut.npz"),
                "--dataset", str(dataset), "--split", "test",
                "--out", str(out)]) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["target"] == "lut"
    assert metrics["records"]


def test_predict_emits_five_fields(dataset, model_dir, tmp_path, capsys):
    graph = sorted((dataset / "graphs").glob("*.json"))[0]
    out = tmp_path / "pred.json"
    assert run(["predict", "--model", str(model_dir),
                "--graph", str(graph), "--out", str(out)]) == 0
    payload = json.loads(out.read_text())
    assert set(payload["predictions"]) == {"dsp", "lut", "ff", "slice", "cp_ns"}
    assert all(v >= 0 for k, v in payload["predictions"].items() if k != "cp_ns")


def test_predict_missing_checkpoints_is_io_error(dataset, tmp_path, capsys):
    graph = sorted((dataset / "graphs").glob("*.json"))[0]
    assert run(["predict", "--model", str(tmp_path),
                "--graph", str(graph)]) == 1
    assert capsys.readouterr().err.startswith("io-error:")


def test_gap_outputs(dataset, model_dir, tmp_path):
    ood = tmp_path / "ood"
    assert run(["gen", "--preset", "cdfg", "--count", "10", "--seed", "9",
                "--out", str(ood)]) == 0
    out = tmp_path / "gap"
    assert run(["gap", "--model", str(model_dir / "lut.npz"),
                "--dataset", str(dataset), "--ood-dataset", str(ood),
                "--mean-readout", "--out", str(out)]) == 0
    gap = json.loads((out / "gap_report.json").read_text())
    assert {"in_dist_err", "out_dist_err", "ratio", "records"} <= set(gap)
    assert len(gap["records"]) == 10
    assert (out / "gap_scatter.csv").exists()
    assert (out / "gap_scatter.png").exists()


def test_inspect_valid_program(dataset, capsys):
    prog = sorted((dataset / "programs").glob("*.p2cir"))[0]
    assert run(["inspect", "--program", str(prog)]) == 0
    assert "valid" in capsys.readouterr().out


def test_inspect_reports_parse_error(tmp_path, capsys):
    bad = tmp_path / "bad.p2cir"
    bad.write_text("func @f(){entry: %r = }")
    assert run(["inspect", "--program", str(bad)]) == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("parse-error:")
    assert "\n" not in err


def test_console_entry_point_runs():
    proc = subprocess.run([sys.executable, "-m", "p2cir.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "gen" in proc.stdout and "predict" in proc.stdout

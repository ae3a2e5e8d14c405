import csv
import json
import subprocess
import sys
import xml.etree.ElementTree as ET
from pathlib import Path

import pytest

from koopcast.cli import build_parser, main

SMALL = ["--history-len", "4", "--horizon", "5"]


def run(out, *argv):
    return main([*argv, "--out", str(out)])


def pipeline(out, seed="0"):
    assert run(out, "import", "--synth", "unicycle_sine", "--synth-n", "30", "--synth-noise",
               "0.01", "--synth-length", "20", "--seed", seed, *SMALL) == 0
    assert run(out, "train-goal", "--epochs", "2", "--batch-size", "32", "--mixtures", "2",
               "--seed", seed, *SMALL) == 0
    assert run(out, "fit-koopman", "--seed", seed, *SMALL) == 0
    assert run(out, "predict", "--num-samples", "3", "--seed", seed, *SMALL) == 0
    assert run(out, "analyze-spectrum", "--seed", seed, *SMALL) == 0
    assert run(out, "benchmark", "--k-list", "1,3", "--seed", seed, *SMALL) == 0
    assert run(out, "sweep-ridge", "--seed", seed, *SMALL) == 0


def test_subcommands_exist():
    sub = next(a for a in build_parser()._actions if a.dest == "command")
    assert set(sub.choices) == {"import", "train-goal", "fit-koopman", "predict",
                                "analyze-spectrum", "benchmark", "sweep-ridge"}


def test_predict_without_model_names_prerequisite(tmp_path, capsys):
    assert run(tmp_path, "predict") == 2
    assert "fit-koopman" in capsys.readouterr().err


def test_train_without_data_names_import(tmp_path, capsys):
    assert run(tmp_path, "train-goal") == 2
    assert "koopcast import" in capsys.readouterr().err


def test_predict_without_goal_model(tmp_path, capsys):
    assert run(tmp_path, "import", "--synth", "constant_velocity", "--synth-n", "10") == 0
    assert run(tmp_path, "fit-koopman") == 0
    assert run(tmp_path, "predict") == 2
    assert "train-goal" in capsys.readouterr().err


def test_import_needs_source(tmp_path):
    assert run(tmp_path, "import") == 2


def test_data_error_exit_code(tmp_path):
    bad = tmp_path / "bad.tsv"
    bad.write_text("0 1 0 zero\n")
    assert run(tmp_path / "o", "import", "--data", str(bad)) == 3


def test_missing_path_is_config_error(tmp_path):
    assert run(tmp_path, "import", "--data", str(tmp_path / "nope.tsv")) == 2


def test_numerical_error_exit_code(tmp_path):
    assert run(tmp_path, "import", "--synth", "constant_velocity", "--synth-n", "20") == 0
    # noiseless straight lines give a singular Gram matrix; lambda = 0 refuses to solve
    assert run(tmp_path, "fit-koopman", "--ridge", "0") == 4


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"synth": "constant_velocity", "synth_n": 7, "seed": 4}))
    assert run(tmp_path / "o", "import", "--config", str(cfg), "--synth-n", "9") == 0
    stats = json.loads((tmp_path / "o/data/stats.json").read_text())
    assert stats["trajectories"] == 9
    man = json.loads((tmp_path / "o/manifests/import.json").read_text())
    assert man["seed"] == 4 and len(man["config_sha256"]) == 64
    cfg.write_text(json.dumps({"not_a_key": 1}))
    assert run(tmp_path / "o", "import", "--config", str(cfg)) == 2


def test_output_env(tmp_path, monkeypatch):
    monkeypatch.setenv("KOOPCAST_OUTPUT_DIR", str(tmp_path / "env_out"))
    assert main(["import", "--synth", "constant_velocity", "--synth-n", "5"]) == 0
    assert (tmp_path / "env_out/data/trajectories.tsv").exists()


def test_profile_sets_horizons(tmp_path):
    assert run(tmp_path, "import", "--synth", "constant_velocity", "--synth-n", "5",
               "--profile", "waymo", "--synth-length", "50") == 0
    cfg = json.loads((tmp_path / "manifests/import.json").read_text())["config"]
    assert (cfg["history_len"], cfg["horizon"], cfg["mixtures"]) == (10, 30, 5)


@pytest.fixture(scope="module")
def two_runs(tmp_path_factory):
    a, b = tmp_path_factory.mktemp("a"), tmp_path_factory.mktemp("b")
    pipeline(a)
    pipeline(b)
    return a, b


def test_reruns_byte_identical(two_runs):
    a, b = two_runs
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert Path("models/koopman.json") in files and Path("benchmark.csv") in files
    for rel in files:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_sweep_ridge_csv(two_runs):
    a, _ = two_runs
    rows = list(csv.DictReader((a / "sweep_ridge.csv").open()))
    assert [float(r["lambda"]) for r in rows] == [1e-4, 1e-3, 1e-2, 1e-1]
    norms = [float(r["frobenius_norm"]) for r in rows]
    assert all(y <= x for x, y in zip(norms, norms[1:]))
    assert all(float(r["spectral_radius"]) >= 0 and float(r["fit_residual"]) >= 0 for r in rows)


def test_artifacts_well_formed(two_runs):
    a, _ = two_runs
    for svg in a.glob("*.svg"):
        assert ET.parse(svg).getroot().tag.endswith("svg")
    bench = json.loads((a / "benchmark.json").read_text())
    s = bench["scenes"]["test"]
    assert s["minADE"]["3"] <= s["minADE"]["1"]
    preds = json.loads((a / "predictions.json").read_text())
    first = next(iter(preds.values()))
    assert len(first["candidates"]) == 3 and len(first["candidates"][0]) == 5
    man = json.loads((a / "manifests/benchmark.json").read_text())
    assert "benchmark.csv" in man["outputs"] and "versions" in man
    assert "time" not in json.dumps(man).lower().replace("timing", "")


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "koopcast.cli", "predict", "--out",
                          str(tmp_path)], capture_output=True, text=True)
    assert out.returncode == 2 and "fit-koopman" in out.stderr

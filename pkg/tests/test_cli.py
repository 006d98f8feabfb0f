import csv
import json
import subprocess
import sys

import pytest
from conftest import toy_instance

from fedcgd import schedulers as sch
from fedcgd.cli import OUTPUT_ENV, main

SMALL = {
    "fleet": {"devices": 6, "p_available": 0.6},
    "data": {"scheme": "dirichlet", "alpha": 0.5, "num_classes": 3, "feature_dim": 2,
             "train_per_class": 20, "test_per_class": 10},
    "hyper": {"eta": 0.1, "tau": 1, "batch": 4, "rounds": 3},
    "solver": {"name": "fscd"},
    "seeds": [0],
}


@pytest.fixture
def toy_file(tmp_path):
    path = tmp_path / "toy.json"
    sch.save_instance(toy_instance(sigma=0.0), path)
    return path


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(SMALL))
    return path


def test_solve_oracle_on_complementary_example(toy_file, capsys):
    assert main(["solve", "--instance", str(toy_file), "--solver", "oracle"]) == 0
    out = json.loads(capsys.readouterr().out)
    # 0-based: these are the third and fourth devices
    assert out["members"] == [2, 3]
    assert out["objective"] == pytest.approx(0.0, abs=1e-15)
    assert out["iterations"] == 1


@pytest.mark.parametrize("solver", ["gs", "greedy", "fscd", "cd", "brute-force"])
def test_solve_every_solver(toy_file, capsys, solver):
    assert main(["solve", "--instance", str(toy_file), "--solver", solver, "--seed", "3"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["members"] and out["bandwidth_used_hz"] <= 10.0


def test_unknown_solver_is_usage_error(toy_file, capsys):
    assert main(["solve", "--instance", str(toy_file), "--solver", "magic"]) == 1
    err = capsys.readouterr().err
    assert "unknown solver" in err and "usage" in err


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["solve"], ["bench-solvers", "--devices", "a,b"],
                                  ["bench-solvers", "--bogus"], ["bench-solvers", "--instances", "0"]])
def test_usage_errors(argv, capsys):
    assert main(argv) == 1


def test_malformed_instance_is_data_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"devices": [\n  oops\n]}')
    assert main(["solve", "--instance", str(bad), "--solver", "gs"]) == 2
    assert "line 2" in capsys.readouterr().err
    doc = toy_instance().to_json()
    doc["devices"][1]["dist"] = "x"
    bad.write_text(json.dumps(doc))
    assert main(["solve", "--instance", str(bad), "--solver", "gs"]) == 2
    assert "devices[1]" in capsys.readouterr().err


def test_missing_instance_is_data_error(tmp_path):
    assert main(["solve", "--instance", str(tmp_path / "nope.json"), "--solver", "gs"]) == 2


def test_bench_is_deterministic(tmp_path):
    argv = ["bench-solvers", "--devices", "4,5", "--instances", "3", "--seed", "7", "--out"]
    assert main(argv + [str(tmp_path / "a.json")]) == 0
    assert main(argv + [str(tmp_path / "b.json")]) == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    rows = json.loads((tmp_path / "a.json").read_text())["rows"]
    assert {r["devices"] for r in rows} == {4, 5}


def test_bench_uses_env_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    assert main(["bench-solvers", "--devices", "4", "--instances", "2"]) == 0
    assert (tmp_path / "env" / "bench.json").exists()


def test_train(tmp_path, config, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", str(config), "--out", str(out), "--g-mode", "per-class"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["output"] == str(out)
    rows = list(csv.DictReader((out / "metrics.csv").open()))
    assert len(rows) == 3
    saved = json.loads((out / "summary.json").read_text())
    assert saved["config"]["solver"]["g_mode"] == "per-class"


def test_train_env_output_and_overrides(tmp_path, config, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    assert main(["train", "--config", str(config), "--solver", "bc", "--seeds", "1,2"]) == 0
    saved = json.loads((tmp_path / "env" / "summary.json").read_text())
    assert saved["solver"] == "bc" and saved["seeds"] == [1, 2]


def test_train_bad_config_is_data_error(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"fleet": {"devices": -1}}))
    assert main(["train", "--config", str(cfg)]) == 2
    cfg.write_text(json.dumps({"surprise": 1}))
    assert main(["train", "--config", str(cfg)]) == 2
    assert "surprise" in capsys.readouterr().err


def test_gen_data(tmp_path, config):
    out = tmp_path / "data"
    assert main(["gen-data", "--config", str(config), "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["devices"]) == 6
    train = list(csv.DictReader((out / "train.csv").open()))
    assert len(train) == 60 and list(train[0]) == ["index", "label", "x0", "x1"]
    for dev in manifest["devices"]:
        labels = [int(train[i]["label"]) for i in dev["indices"]]
        counts = [labels.count(c) / len(labels) for c in range(3)]
        assert counts == pytest.approx(dev["label_dist"])
    assert len(list(csv.DictReader((out / "test.csv").open()))) == 30


def test_gen_data_needs_out(config, monkeypatch):
    monkeypatch.delenv(OUTPUT_ENV, raising=False)
    assert main(["gen-data", "--config", str(config)]) == 1


def test_module_entry_point(toy_file):
    proc = subprocess.run(
        [sys.executable, "-m", "fedcgd", "solve", "--instance", str(toy_file), "--solver", "oracle"],
        capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and json.loads(proc.stdout)["members"] == [2, 3]
    proc = subprocess.run([sys.executable, "-m", "fedcgd", "solve", "--solver", "x"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 1

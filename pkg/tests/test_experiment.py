import csv
import json
import math

import numpy as np
import pytest

from fedcgd import channel as ch
from fedcgd import experiment as ex
from fedcgd import fltrain as fl


def small_cfg(**kw):
    base = dict(
        fleet=ex.FleetConfig(8, 0.5),
        data=ex.DataConfig(scheme="dirichlet", alpha=0.5, num_classes=4, feature_dim=3, train_per_class=40),
        hyper=fl.Hyperparams(0.1, 1, 8, 5),
        solver=fl.SolverConfig("fscd"),
        seeds=[0, 1],
    )
    base.update(kw)
    return ex.ExperimentConfig(**base)


def test_placement():
    a = ex.place_devices(1, 250.0, ex.seeded(3, 0))
    b = ex.place_devices(1, 250.0, ex.seeded(3, 0))
    assert np.array_equal(a, b)
    pos = ex.place_devices(10_000, 250.0, np.random.default_rng(0))
    r = np.hypot(pos[:, 0], pos[:, 1])
    assert np.all(r <= 250.0)
    assert r.mean() == pytest.approx(2 * 250 / 3, rel=0.02)


def test_snapshot_channel():
    params = ch.ChannelParams()
    pos = np.array([[18.0, 0.0], [0.0, 18.0], [-18.0, 0.0]])
    los = ch.draw_los(np.hypot(pos[:, 0], pos[:, 1]), np.random.default_rng(0))
    assert los.all()
    a = ex.snapshot_channel(pos, los, params, ex.seeded(0, 1))
    b = ex.snapshot_channel(pos, los, params, ex.seeded(0, 1))
    assert a == b
    line = np.column_stack([np.linspace(20, 240, 12), np.zeros(12)])
    flat = ch.ChannelParams(shadow_std_los_db=1e-12, shadow_std_nlos_db=1e-12)
    links = ex.snapshot_channel(line, np.ones(12, dtype=bool), flat, np.random.default_rng(0))
    gains = [l.avg_gain for l in links]
    assert all(x > y for x, y in zip(gains, gains[1:]))


def test_config_roundtrip_and_errors(tmp_path):
    cfg = small_cfg()
    again = ex.ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again.to_dict() == cfg.to_dict()
    with pytest.raises(ValueError, match="unknown config keys"):
        ex.ExperimentConfig.from_dict({"fleet": {}, "bogus": 1})
    with pytest.raises(ValueError):
        ex.ExperimentConfig.from_dict({"fleet": {"devices": 0}})
    with pytest.raises(ValueError):
        ex.ExperimentConfig.from_dict({"fleet": {"p_available": 1.5}})
    with pytest.raises(ValueError):
        ex.ExperimentConfig.from_dict({"solver": {"name": "magic"}})
    bad = tmp_path / "c.json"
    bad.write_text("{\n  \"fleet\": {,}\n}")
    with pytest.raises(ValueError, match="line 2"):
        ex.ExperimentConfig.load(bad)
    bad.write_text('{"fleet": {"devicez": 3}}')
    with pytest.raises(ValueError, match="devicez"):
        ex.ExperimentConfig.load(bad)


def test_run_experiment_outputs(tmp_path):
    res = ex.run_experiment(small_cfg(), tmp_path / "out")
    rows = list(csv.DictReader((tmp_path / "out" / "metrics.csv").open()))
    assert list(rows[0]) == list(fl.METRIC_FIELDS)
    assert len(rows) == 2 * 5
    budget = ch.ChannelParams().total_bandwidth_hz
    for r in rows:
        assert float(r["bandwidth_used_hz"]) <= budget
        assert int(r["scheduled"]) <= int(r["available"])
        assert 0.0 <= float(r["test_acc"]) <= 1.0
        w = float(r["wemd"])
        assert math.isnan(w) or w >= 0
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["solver"] == "fscd" and len(summary["per_seed"]) == 2
    assert 0.0 <= summary["mean_final_acc"] <= 1.0
    assert summary["per_seed"][0]["positions_redrawn_per_seed"] is True
    assert res.summary["mean_scheduled"] == summary["mean_scheduled"]


def test_identical_configs_give_identical_bytes(tmp_path):
    ex.run_experiment(small_cfg(), tmp_path / "a")
    ex.run_experiment(small_cfg(workers=2), tmp_path / "b")
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_seeds_change_results():
    a = ex.run_experiment(small_cfg(seeds=[0]))
    b = ex.run_experiment(small_cfg(seeds=[1]))
    assert ex.metrics_csv(a.trials) != ex.metrics_csv(b.trials)


def test_output_error_has_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        ex.run_experiment(small_cfg(seeds=[0]), blocker / "sub")


def test_sort_scheme_runs():
    cfg = small_cfg(data=ex.DataConfig(scheme="sort", imbalance=3, num_classes=4, feature_dim=3), seeds=[0])
    res = ex.run_experiment(cfg)
    assert res.trials[0].summary["rounds"] == 5


def test_relative_error():
    assert ex.relative_error(1.1, 1.0) == pytest.approx(0.1)
    assert ex.relative_error(0.0, 0.0) == 0.0
    assert ex.relative_error(5e-10, 0.0) == 0.0
    assert ex.relative_error(0.3, 0.0) == pytest.approx(0.3)
    assert ex.relative_error(1.0 - 1e-15, 1.0) == 0.0


def test_random_instance_has_a_feasible_device():
    for i in range(10):
        inst, gains = ex.random_instance(6, np.random.default_rng(i))
        assert inst.feasible.any() and gains.shape == (6,)
        assert np.allclose(inst.device_dists.sum(axis=1), 1.0)


def test_bench_report_shape():
    rep = ex.bench_solvers([4, 6], 3, seed=1)
    assert {r["solver"] for r in rep.rows} == {"gs", "fscd", "cd", "oracle"}
    assert rep.row(6, "oracle")["mean_rel_error"] == 0.0
    for r in rep.rows:
        assert r["mean_rel_error"] >= 0 and r["instances"] == 3
    assert ex.bench_solvers([4, 6], 3, seed=1).to_json() == rep.to_json()
    with pytest.raises(ValueError):
        ex.bench_solvers([30], 1)
    with pytest.raises(KeyError):
        rep.row(5, "gs")

import csv
import json

import numpy as np
import pytest

from bgwatermark import cli
from bgwatermark.config import ExperimentConfig, build
from bgwatermark.errors import ConfigMismatch
from bgwatermark.verify import Check

BASE = {
    "system": {"generator": {"n": 3, "p": 2, "m": 2, "seed": 5}},
    "drop": {"kind": "markov", "alpha": 0.69, "beta": 0.9},
    "watermark": {"type": "wm1", "delta_factor": 1.45},
    "detector": {"window": 5, "mu_factor": 0.5, "tau": 0.0},
    "experiment": {
        "trials": 20,
        "horizon": 150,
        "burn_in": 100,
        "master_seed": 3,
        "eval_window": 30,
        "attack": {"kind": "replay", "start_time": 60, "record_len": 50},
        "verify": {"chains": 8, "steps": 400},
    },
}


def write_cfg(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_config_round_trip():
    cfg = ExperimentConfig.from_dict(BASE)
    assert ExperimentConfig.loads(cfg.dumps()) == cfg
    assert cfg.dumps() == ExperimentConfig.loads(cfg.dumps()).dumps()


def test_unknown_section_rejected():
    with pytest.raises(ConfigMismatch):
        ExperimentConfig.from_dict({"bogus": 1})


def test_build_restricts_design_to_drop_point():
    setup = build(ExperimentConfig.from_dict(BASE))
    assert [pt.params for pt in setup.design.surface] == [(0.69, 0.9)]
    assert setup.loop.expected_cost() == pytest.approx(1.45 * setup.J_star, rel=1e-6)


@pytest.mark.parametrize("command", ["design", "simulate", "roc", "ttd"])
def test_commands_are_byte_reproducible(tmp_path, command):
    cfg = write_cfg(tmp_path, BASE)
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert cli.main([command, "--config", cfg, "--out", str(out)]) == 0
        outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert outputs[0] == outputs[1] and outputs[0]


def test_roc_threads_and_monotone(tmp_path):
    cfg = write_cfg(tmp_path, BASE)
    assert cli.main(["roc", "--config", cfg, "--out", str(tmp_path / "t1")]) == 0
    assert cli.main(["roc", "--config", cfg, "--out", str(tmp_path / "t3"), "--threads", "3"]) == 0
    assert (tmp_path / "t1" / "roc.csv").read_bytes() == (tmp_path / "t3" / "roc.csv").read_bytes()
    rows = read_csv(tmp_path / "t1" / "roc.csv")
    for det in ("correlation", "chi2"):
        fpr = np.array([float(r["fpr"]) for r in rows if r["detector"] == det])
        tpr = np.array([float(r["tpr"]) for r in rows if r["detector"] == det])
        assert fpr[0] == tpr[0] == 0.0 and fpr[-1] == tpr[-1] == 1.0
        assert np.all(np.diff(fpr) >= 0) and np.all(np.diff(tpr) >= 0)


def test_seed_override_changes_output(tmp_path):
    cfg = write_cfg(tmp_path, BASE)
    cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "s3")])
    cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "s4"), "--seed", "4"])
    assert (tmp_path / "s3" / "trace.csv").read_bytes() != (tmp_path / "s4" / "trace.csv").read_bytes()


def test_design_csv_columns(tmp_path):
    cfg = dict(BASE)
    cfg.pop("drop")
    cfg["watermark"] = {"type": "wm1", "delta_factor": 1.45, "grid": [[0.5, 0.5], [0.69, 0.9], [0.9, 0.2]]}
    path = write_cfg(tmp_path, cfg)
    assert cli.main(["design", "--config", path, "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "design.csv")
    assert list(rows[0]) == ["alpha", "beta", "feasible", "reason", "base_cost", "objective", "cost"]
    assert len(rows) == 3
    summary = json.loads((tmp_path / "design.json").read_text())
    assert summary["J_bar"] <= 1.45 * summary["J_star"] * (1 + 1e-6)


def test_one_trial_smoke(tmp_path):
    cfg = json.loads(json.dumps(BASE))
    cfg["experiment"]["trials"] = 1
    path = write_cfg(tmp_path, cfg)
    for command in ("roc", "ttd"):
        assert cli.main([command, "--config", path, "--out", str(tmp_path / command)]) == 0
    rows = read_csv(tmp_path / "ttd" / "ttd.csv")
    assert len(rows) == 2


def test_simulate_trace_layout(tmp_path):
    path = write_cfg(tmp_path, BASE)
    assert cli.main(["simulate", "--config", path, "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "trace.csv")
    assert len(rows) == 150 and list(rows[0]) == ["k", "stat_corr", "stat_chi2", "triggered"]
    summary = json.loads((tmp_path / "simulate.json").read_text())
    assert set(summary) == {"correlation", "chi2"}


def test_fault_command(tmp_path):
    cfg = json.loads(json.dumps(BASE))
    cfg["experiment"].update(trials=40, horizon=300, attack={"kind": "fault", "start_time": 120, "bias": [3.0, 0.0]}, settle=50)
    path = write_cfg(tmp_path, cfg)
    assert cli.main(["fault", "--config", path, "--out", str(tmp_path)]) == 0
    res = json.loads((tmp_path / "fault.json").read_text())
    assert res["chi2"]["shift"] < 0
    assert len(read_csv(tmp_path / "trace.csv")) == 300


def test_fault_command_needs_fault_attack(tmp_path):
    assert cli.main(["fault", "--config", write_cfg(tmp_path, BASE), "--out", str(tmp_path)]) == 1


def test_infeasible_budget_exit_code(tmp_path, capsys):
    cfg = dict(BASE, watermark={"type": "wm1", "delta": 0.1})
    assert cli.main(["design", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path)]) == 1
    assert "infeasible" in capsys.readouterr().err


def test_bad_config_exit_code(tmp_path, capsys):
    assert cli.main(["design", "--config", write_cfg(tmp_path, {"bogus": 1}), "--out", str(tmp_path)]) == 1
    assert cli.main(["design", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 1
    assert "config error" in capsys.readouterr().err


def test_verify_exit_codes(tmp_path, monkeypatch):
    path = write_cfg(tmp_path, BASE)
    assert cli.main(["verify", "--config", path, "--out", str(tmp_path)]) == 0
    checks = json.loads((tmp_path / "verify.json").read_text())
    assert checks and all(c["passed"] for c in checks)

    def failing(*args, **kwargs):
        return [Check("forced", 1.0, 0.0, 0.1, False)]

    monkeypatch.setattr(cli, "loop_checks", failing)
    assert cli.main(["verify", "--config", path, "--out", str(tmp_path)]) == 2


def test_wm2_config(tmp_path):
    cfg = {
        "system": {"generator": {"n": 3, "p": 2, "m": 2, "seed": 5}},
        "watermark": {"type": "wm2", "delta_factor": 1.45, "rho_bar": 0.8, "pd_grid": [0.0, 0.2], "omega_grid": [0.0, 0.1, 0.4]},
        "experiment": {"trials": 10, "horizon": 150, "attack": {"kind": "replay", "start_time": 60, "record_len": 50}},
    }
    path = write_cfg(tmp_path, cfg)
    assert cli.main(["design", "--config", path, "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "design.csv")
    assert list(rows[0])[:2] == ["p_d", "omega"] and len(rows) == 6

import hashlib
import json
import subprocess
import sys

import pytest

from tzsim import cli
from tzsim.backhaul import BackhaulChain
from tzsim.experiment import SweepRow

SMALL = {
    "density_per_km2": 5,
    "phases": {"warmup_hours": 2, "training_hours": 4, "testing_days": 1},
    "chain": {"cssr": [0.97, 0.9, 0.8, 0.6, 0.4, 0.8, 0.6, 0.4, 0.0]},
}


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL))
    return path


def test_validate_prints_resolved_config(capsys, small_config):
    assert cli.main(["validate", "--config", str(small_config)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["derived"]["testing_steps"] == 144
    assert doc["derived"]["population"] == 320


def test_validate_defaults(capsys):
    assert cli.main(["validate"]) == 0
    assert json.loads(capsys.readouterr().out)["derived"]["population"] == 6400


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"sync": {"thresholds": [1.5]}}))
    assert cli.main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "sync.thresholds[0]" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_runtime_error_exit_code(tmp_path, small_config):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["simulate", "--config", str(small_config), "--out", str(blocker / "sub")]) == 3


def test_simulate_outputs_and_determinism(tmp_path, small_config):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["simulate", "--config", str(small_config), "--seed", "4", "--out", str(a)]) == 0
    assert cli.main(["simulate", "--config", str(small_config), "--seed", "4", "--out", str(b)]) == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == ["audit.jsonl", "final_world.csv", "motion_model.json", "resolved_config.json", "series.csv", "summary.json"]
    for name in names:
        assert sha(a / name) == sha(b / name), name
    lines = (a / "series.csv").read_text().splitlines()
    assert lines[0] == "step,backhaul_state,csso,reports_this_step,syncs_this_round,mode"
    assert len(lines) == 1 + 144
    summary = json.loads((a / "summary.json").read_text())
    assert summary["testing_steps"] == 144 and summary["seed"] == 4


def test_simulate_disabled_policy(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({**SMALL, "sync": {"enabled": False}}))
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o" / "summary.json").read_text())["sync_traffic_total"] == 0


def test_simulate_writes_only_into_out_dir(tmp_path, small_config, monkeypatch):
    work = tmp_path / "work"
    work.mkdir()
    monkeypatch.chdir(work)
    assert cli.main(["simulate", "--config", str(small_config), "--out", "results"]) == 0
    assert [p.name for p in work.iterdir()] == ["results"]


def test_sweep_rows_and_bytes(tmp_path, small_config):
    args = ["sweep", "--config", str(small_config), "--thresholds", "disabled,0.2,0.05", "--seeds", "0,1,2", "--self-check"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b"), "--workers", "2"]) == 0
    for name in ("sweep.csv", "sweep_long.csv", "sweep_summary.csv", "resolved_config.json"):
        assert sha(tmp_path / "a" / name) == sha(tmp_path / "b" / name), name
    sweep = (tmp_path / "a" / "sweep.csv").read_text().splitlines()
    assert sweep[0] == "threshold,seed,csso_reports,sync_traffic,baseline_reports,reliability_gain"
    assert len(sweep) == 1 + 9
    summary = (tmp_path / "a" / "sweep_summary.csv").read_text().splitlines()
    assert len(summary) == 1 + 3
    assert len((tmp_path / "a" / "sweep_long.csv").read_text().splitlines()) == 1 + 27


def test_sweep_self_check_failure(tmp_path, small_config, monkeypatch, capsys):
    rows = [SweepRow("disabled", 0, 5, 0, 5, 0.0), SweepRow("0.1", 0, 9, 1, 5, -0.8)]
    monkeypatch.setattr(cli, "threshold_sweep", lambda *a, **k: rows)
    code = cli.main(["sweep", "--config", str(small_config), "--thresholds", "disabled,0.1", "--self-check", "--out", str(tmp_path / "o")])
    assert code == 4
    assert "reports rise" in capsys.readouterr().err


@pytest.mark.parametrize(
    "extra",
    [["--thresholds", "0.1"], ["--thresholds", "disabled,2"], ["--thresholds", "x,0.1"], ["--seeds", ""], ["--workers", "0"]],
)
def test_sweep_usage_errors(tmp_path, small_config, extra):
    args = ["sweep", "--config", str(small_config), "--out", str(tmp_path / "o")] + extra
    if "--thresholds" not in extra:
        args += ["--thresholds", "disabled,0.1"]
    assert cli.main(args) == 2


def test_fit_chain_round_trip(tmp_path):
    log = tmp_path / "trace.txt"
    log.write_text("\n".join(["7", "6", "7", "6", "7"]) + "\n")
    assert cli.main(["fit-chain", str(log), "--out", str(tmp_path / "o")]) == 0
    chain = BackhaulChain.load(tmp_path / "o" / "chain.json")
    assert chain.transition[6, 5] == 1.0 and chain.transition[5, 6] == 1.0


def test_fit_chain_malformed_line(tmp_path, capsys):
    log = tmp_path / "trace.txt"
    log.write_text("1\n2\nthree\n")
    assert cli.main(["fit-chain", str(log), "--out", str(tmp_path / "o")]) == 2
    assert "line 3" in capsys.readouterr().err


def test_fit_chain_missing_file(tmp_path):
    assert cli.main(["fit-chain", str(tmp_path / "none.txt"), "--out", str(tmp_path / "o")]) == 2


def test_console_entry_points(small_config):
    for cmd in (["tzsim"], [sys.executable, "-m", "tzsim"]):
        proc = subprocess.run(cmd + ["validate", "--config", str(small_config)], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert json.loads(proc.stdout)["seed"] == 0

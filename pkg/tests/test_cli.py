import json

import pytest

from followbench.baselines import IdmParams, load_params
from followbench.cli import main
from followbench.events import load_events


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "events.csv"
    assert main(["synth", "--output", str(path), "--n", "4", "--seed", "7", "--profile", "stop_and_go"]) == 0
    return path


def test_synth_writes_valid_events(data):
    events = load_events(data, expected_duration=15.0)
    assert len(events) == 4


def test_calibrate_writes_params_in_bounds(tmp_path, data, capsys):
    rc = main(["calibrate", "--model", "idm", "--data", str(data), "--out", str(tmp_path),
               "--population", "8", "--generations", "3"])
    assert rc == 0
    params = load_params(tmp_path / "params_idm.json")
    assert isinstance(params, IdmParams) and params.in_bounds()
    lines = (tmp_path / "fitness_history.csv").read_text().splitlines()
    assert lines[0] == "generation,best_fitness" and len(lines) == 5
    assert "best fitness" in capsys.readouterr().out


def test_calibrate_per_event(tmp_path, data):
    rc = main(["calibrate", "--model", "ghr", "--data", str(data), "--out", str(tmp_path),
               "--population", "4", "--generations", "1", "--per-event"])
    assert rc == 0
    assert len(json.loads((tmp_path / "params_ghr.json").read_text())) == 4


@pytest.mark.parametrize(
    "argv, code",
    [
        (["calibrate", "--model", "lstm", "--data", "x.csv"], 2),
        (["benchmark", "--models", "idm,lstm", "--data", "x.csv"], 2),
        (["benchmark", "--data", "does-not-exist.csv"], 3),
        (["benchmark", "--config", "missing.cfg"], 2),
        (["frobnicate"], 2),
    ],
)
def test_exit_codes(tmp_path, argv, code):
    assert main(argv + ["--out", str(tmp_path)] if argv[0] != "frobnicate" else argv) == code


def test_export_rejects_bad_n(tmp_path, data):
    assert main(["export-finetune", "--data", str(data), "--n", "0", "--out", str(tmp_path)]) == 2


def test_bad_data_exits_3(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("event_id,t,spacing,lv_speed,fv_speed\na,0.0,10,-1,2\na,0.1,10,1,2\n")
    assert main(["simulate", "--model", "idm", "--data", str(bad), "--out", str(tmp_path)]) == 3


def test_remote_without_key_exits_4(tmp_path, data, monkeypatch):
    monkeypatch.delenv("FOLLOWBENCH_UNSET_KEY", raising=False)
    rc = main(["simulate", "--model", "genfollower", "--data", str(data), "--out", str(tmp_path),
               "--backend", "remote", "--base-url", "http://127.0.0.1:9", "--api-key-env", "FOLLOWBENCH_UNSET_KEY"])
    assert rc == 4


def test_benchmark_outputs_and_playback(tmp_path, data):
    rc = main(["benchmark", "--data", str(data), "--out", str(tmp_path),
               "--models", "idm,ghr,playback,constant,genfollower"])
    assert rc == 0
    report = json.loads((tmp_path / "report.json").read_text())
    rows = {m["model_name"]: m for m in report["models"]}
    assert rows["playback"]["mse_spacing"] < 1e-12
    for name in ("idm", "ghr", "playback", "constant", "genfollower"):
        assert (tmp_path / f"trajectories_{name}.csv").exists()
    assert (tmp_path / "explanations_genfollower.jsonl").read_text().count("\n") == 4 * 22
    assert "Collision Rate % ↓" in (tmp_path / "report.txt").read_text()
    manifest = json.loads((tmp_path / "run_manifest.json").read_text())
    assert manifest["seed"] == 7 and manifest["command"] == "benchmark"


def test_manifest_rerun_reproduces_report(tmp_path, data):
    first, second = tmp_path / "a", tmp_path / "b"
    assert main(["benchmark", "--data", str(data), "--out", str(first), "--models", "idm,genfollower",
                 "--ttc-agg", "median"]) == 0
    assert main(["benchmark", "--config", str(first / "run_manifest.json"), "--out", str(second)]) == 0
    assert (first / "report.json").read_bytes() == (second / "report.json").read_bytes()


def test_key_value_config_file(tmp_path, data):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"data = {data}\nmodels = idm\nttc-agg = global-min  # strictest\n")
    assert main(["benchmark", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["ttc_aggregation"] == "global-min"
    assert [m["model_name"] for m in report["models"]] == ["idm"]

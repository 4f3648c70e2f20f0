import csv
import hashlib
import json

import pytest

from apadiag.cli import EXIT_CODES, run
from apadiag.config import RunConfig, load_config
from apadiag.errors import ConfigError


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def call(capsys, *argv):
    code = run([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def error_of(err):
    lines = err.strip().splitlines()
    assert len(lines) == 1
    return json.loads(lines[0])


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert run(["gen", "--config", "tiny", "--out", str(out), "--threads", "1"]) == 0
    assert run(["train", "--config", "tiny", "--out", str(out), "--threads", "1"]) == 0
    return out


def test_gen_writes_data_and_echo(trained):
    echo = json.loads((trained / "gen.manifest.json").read_text())
    assert set(echo["artifacts"]) == {"train.apad", "test.apad", "dataset.json"}
    assert echo["artifacts"]["train.apad"] == sha(trained / "train.apad")
    assert len(echo["config"]["dataset"]["seeds"]) == 49 * 2


def test_gen_refuses_overwrite_then_reproduces_with_force(trained, capsys):
    before = sha(trained / "train.apad")
    code, _, err = call(capsys, "gen", "--config", "tiny", "--out", trained, "--threads", "1")
    assert code == EXIT_CODES["exists"] and error_of(err)["error"] == "exists"
    code, _, _ = call(capsys, "gen", "--config", "tiny", "--out", trained, "--threads", "1", "--force")
    assert code == 0 and sha(trained / "train.apad") == before


def test_train_without_data(tmp_path, capsys):
    code, _, err = call(capsys, "train", "--config", "tiny", "--out", tmp_path / "empty")
    assert code == EXIT_CODES["not_found"]
    assert "dataset not found" in error_of(err)["message"]


def test_train_outputs(trained):
    report = json.loads((trained / "train_report.json").read_text())
    assert report["epochs"] == len(report["loss"]) >= 1
    assert json.loads((trained / "latency.json").read_text())["inference_s_per_sample"] > 0
    assert "latency.json" not in json.loads((trained / "train.manifest.json").read_text())["artifacts"]


def test_sweep_has_sixteen_rows(trained, capsys):
    code, _, _ = call(capsys, "sweep", "--config", "tiny", "--out", trained, "--snr", "-5:9", "--force")
    assert code == 0
    rows = list(csv.DictReader(open(trained / "sweep.csv")))
    assert len(rows) == 16 and rows[0]["snr_db"] == "clean"
    assert [int(r["snr_db"]) for r in rows[1:]] == list(range(-5, 10))


def test_eval_and_report(trained, capsys):
    assert call(capsys, "eval", "--config", "tiny", "--out", trained, "--force")[0] == 0
    grid = list(csv.reader(open(trained / "confusion.csv")))
    assert len(grid) == 50 and len(grid[0]) == 50
    assert call(capsys, "report", "--config", "tiny", "--out", trained, "--force")[0] == 0
    summary = json.loads((trained / "report.json").read_text())
    assert summary["parameters"]["reference_architecture"] == 5_529_049
    assert summary["parameters"]["published_count"] - summary["parameters"]["reference_architecture"] == 20_098
    assert "eval" in summary and "5,529,049" in (trained / "report.md").read_text()


def test_stats_and_multi(tmp_path, capsys):
    code, _, _ = call(capsys, "stats", "--config", "tiny", "--out", tmp_path, "--runs", "2", "--snr", "0:1", "--threads", "1")
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "stats.csv")))
    assert len(rows) == 49 * 3 * 2 and set(rows[0]) == {"class", "snr_db", "run", "accuracy"}
    code, _, _ = call(capsys, "multi", "--config", "tiny", "--out", tmp_path, "--threads", "1")
    assert code == 0
    assert json.loads((tmp_path / "multi_report.json").read_text())["confusion"]["class_names"][0] == "no_fault"


@pytest.mark.parametrize("argv,category", [
    (["gen", "--bogus"], "usage"),
    (["frobnicate"], "usage"),
    (["gen", "--config", "missing.json"], "config"),
    (["stats", "--config", "tiny", "--runs", "1"], "config"),
    (["sweep", "--config", "tiny", "--snr", "9:1"], "domain"),
])
def test_error_categories(argv, category, tmp_path, capsys):
    code, _, err = call(capsys, *argv, "--out", tmp_path)
    assert error_of(err)["error"] == category
    assert code == EXIT_CODES[category] != 0


def test_threads_env_fallback(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("APA_DIAG_THREADS", "0")
    code, _, err = call(capsys, "gen", "--config", "tiny", "--out", tmp_path)
    assert code == EXIT_CODES["config"]
    monkeypatch.setenv("APA_DIAG_THREADS", "1")
    assert call(capsys, "gen", "--config", "tiny", "--out", tmp_path)[0] == 0
    assert json.loads((tmp_path / "gen.manifest.json").read_text())["threads"] == 1


def test_config_file_layering(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({
        "preset": "tiny",
        "dataset": {"n_captures_per_class": 3, "pa": {"memory_depth": 1}},
        "train": {"optimizer": {"max_epochs": 2}},
    }))
    cfg = load_config(str(path))
    assert cfg.dataset.n_captures_per_class == 3 and cfg.dataset.pa["memory_depth"] == 1
    assert cfg.train.optimizer.max_epochs == 2 and cfg.model.hidden == (32, 32, 32)
    code, _, _ = call(capsys, "gen", "--config", path, "--out", tmp_path / "o", "--seed", "7", "--threads", "1")
    assert code == 0
    echo = json.loads((tmp_path / "o" / "gen.manifest.json").read_text())
    assert echo["config"]["dataset"]["seed"] == 7 and echo["config"]["dataset"]["n_captures_per_class"] == 3


def test_config_round_trip_and_validation():
    cfg = load_config("default")
    assert RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))).to_dict() == cfg.to_dict()
    assert load_config("full").model.n_trainable() == 5_529_049
    with pytest.raises(ConfigError):
        RunConfig().merged({"model": {"input_dim": 10}}).validate()
    with pytest.raises(ConfigError):
        RunConfig().merged({"bogus": {}})
    assert cfg.with_scheme("multigroup").model.n_classes == 8


def test_manifest_echo_reconstructs_dataset(trained, tmp_path, capsys):
    echo = json.loads((trained / "gen.manifest.json").read_text())
    path = tmp_path / "echo.json"
    path.write_text(json.dumps({"preset": "tiny", **echo["config"]}))
    assert call(capsys, "gen", "--config", path, "--out", tmp_path / "re", "--threads", "1")[0] == 0
    assert sha(tmp_path / "re" / "train.apad") == sha(trained / "train.apad")

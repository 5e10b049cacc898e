import json

import pytest

from conftest import casas_lines, small_home
from harupdate.cli import main


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["ingest"], ["update", "--run-dir", "x", "--cycles", "two"],
                                  ["report"], ["report", "--matrix", "m.json", "--format", "xml"]])
def test_usage_errors_exit_1(argv, capsys):
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    assert code == 1


def test_ingest_summary(tmp_path, capsys):
    log = tmp_path / "log.txt"
    log.write_text("\n".join(casas_lines([("M001", "ON", "Sleep", "begin"), ("T001", "20.5"),
                                          ("M001", "OFF", "Sleep", "end")])) + "\n")
    code, out, _ = run(["ingest", "--input", str(log)], capsys)
    doc = json.loads(out)
    assert code == 0 and doc["summary"]["sensor_count"] == 1 and doc["blocks"][0]["events"] == 2


def test_data_errors_exit_2(tmp_path, capsys):
    assert run(["ingest", "--input", str(tmp_path / "missing.txt")], capsys)[0] == 2
    bad = tmp_path / "bad.txt"
    bad.write_text("not a casas line\n")
    assert run(["ingest", "--input", str(bad)], capsys)[0] == 2
    assert run(["update", "--run-dir", str(tmp_path / "norun")], capsys)[0] == 2
    assert run(["report", "--run-dir", str(tmp_path)], capsys)[0] == 2


def test_synth_writes_parseable_log(tmp_path, capsys):
    out = tmp_path / "home.txt"
    code, _, _ = run(["synth", "--days", "7", "--seed", "3", "--out", str(out)], capsys)
    assert code == 0
    code, text, _ = run(["ingest", "--input", str(out)], capsys)
    assert code == 0 and json.loads(text)["summary"]["days"] == 7


def test_end_to_end_run(tmp_path, capsys):
    cfg = tmp_path / "home.json"
    cfg.write_text(json.dumps(small_home(days=56, noise_rate=0.05).to_dict()))
    run_dir = tmp_path / "run"
    common = ["--k", "10", "--embedder-epochs", "2", "--pretrain-epochs", "1", "--finetune-epochs", "3"]
    assert run(["bootstrap", "--synth-config", str(cfg), "--run-dir", str(run_dir), *common], capsys)[0] == 0
    assert run(["bootstrap", "--synth-config", str(cfg), "--run-dir", str(run_dir)], capsys)[0] == 1
    code, out, _ = run(["update", "--run-dir", str(run_dir), "--cycles", "1"], capsys)
    assert code == 0 and "cursor at 1" in out
    assert run(["update", "--run-dir", str(run_dir)], capsys)[0] == 0
    code, out, _ = run(["evaluate", "--run-dir", str(run_dir)], capsys)
    assert code == 0 and "**M2:" in out
    for fmt in ("csv", "json", "markdown"):
        assert run(["report", "--run-dir", str(run_dir), "--format", fmt], capsys)[0] == 0
    code, out, _ = run(["replay", str(run_dir / "manifest.json"), "--out", str(tmp_path / "again")], capsys)
    assert code == 0 and "identical" in out

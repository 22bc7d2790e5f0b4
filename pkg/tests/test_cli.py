import csv
import json
import math

import pytest

from cannings_lab import cli
from cannings_lab.cli import ConfigError, emit_plot_scripts, main, parse_config, run

CLASSIFY = {"command": "classify", "c": {"kind": "poly", "a": 1}, "mu": {"kind": "poly", "b": -1}}
FLOW = {"command": "flow", "c": 1.0, "mu": [1.0], "analysis": {"k_max": 3}}
DUALITY = {
    "command": "duality-check",
    "geometry": {"N": 4, "K": 1},
    "c": [1.0],
    "measures": [{"atoms": [[0.5, 1.0]]}],
    "state": {"x0": [[0.9, 0.1], [0.2, 0.8], [0.5, 0.5], [0.3, 0.7]], "phi": [[1.0, 0.0], [0.0, 0.0]]},
    "simulation": {"n": 2, "dt": 0.01},
}


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _errors(cfg):
    with pytest.raises(ConfigError) as info:
        parse_config(cfg)
    return info.value.errors


# parse_config

def test_minimal_classify_config():
    cfg = parse_config(CLASSIFY)
    assert cfg.command == "classify"
    assert cfg.c.kind == "polynomial" and cfg.c.index == 1
    assert cfg.mu.index == -1


def test_inline_and_file_sources(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(CLASSIFY))
    assert parse_config(str(p)).raw == parse_config(json.dumps(CLASSIFY)).raw


def test_missing_command():
    assert ("$.command" in [p for p, _ in _errors({"c": 1.0})])


def test_unknown_key_rejected():
    errs = _errors({**CLASSIFY, "colour": "red"})
    assert errs[0][0] == "$"
    assert _errors({**CLASSIFY, "geometry": {"N": 2, "depth": 3}})[0][0] == "$.geometry"


def test_level_count_mismatch():
    cfg = {"command": "flow", "geometry": {"N": 2, "K": 3}, "c": 1.0, "lambda": [1.0, 1.0]}
    assert _errors(cfg) == [("$.lambda", "level count mismatch")]


def test_malformed_json():
    errs = _errors("{not json")
    assert "malformed JSON" in errs[0][1]


# run

def test_classify_fixed_point_case(tmp_path):
    cfg = parse_config({"command": "classify", "c": {"kind": "poly", "a": 1},
                        "mu": {"kind": "poly", "b": 1, "amplitude": 2}, "analysis": {"k_max": 10000}})
    code, out, _ = run(cfg, tmp_path / "r")
    assert code == 0
    rep = json.loads((out / "regime.json").read_text())
    assert rep["case"] == "b"
    assert rep["M"] == pytest.approx(math.sqrt(3) - 1, abs=1e-5)
    assert rep["flow_check"]["relative_error"] * rep["M"] < 1e-4
    assert (out / "flow.csv").exists()


def test_flow_closed_form_row(tmp_path):
    code, out, _ = run(parse_config(FLOW), tmp_path / "r")
    assert code == 0
    rows = _rows(out / "flow.csv")
    assert rows[3]["k"] == "3" and float(rows[3]["d_k"]) == 0.25


def test_duality_gap_at_time_zero(tmp_path):
    cfg = parse_config({**DUALITY, "simulation": {**DUALITY["simulation"], "t": 0.0}})
    code, out, _ = run(cfg, tmp_path / "r", reps=20)
    assert code == 0
    rep = json.loads((out / "duality.json").read_text())
    assert rep["gap"] == 0.0


def test_byte_identical_rerun(tmp_path):
    cfg = parse_config({**DUALITY, "simulation": {**DUALITY["simulation"], "t": 0.1}})
    a = run(cfg, tmp_path / "a", seed=5, reps=50)[1]
    b = run(cfg, tmp_path / "b", seed=5, reps=50)[1]
    for name in ("duality.csv", "duality.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    c = run(cfg, tmp_path / "c", seed=6, reps=50)[1]
    assert (a / "duality.csv").read_bytes() != (c / "duality.csv").read_bytes()


def test_threads_do_not_change_output(tmp_path):
    cfg = parse_config({"command": "coalescent-sim", "geometry": {"N": 2, "K": 2}, "c": [1.0, 0.5],
                        "measures": [{"kingman": 1.0}], "simulation": {"n": 4, "horizon": 2.0}})
    a = run(cfg, tmp_path / "a", seed=3, reps=30, threads=1)[1]
    b = run(cfg, tmp_path / "b", seed=3, reps=30, threads=4)[1]
    assert (a / "trajectory.csv").read_bytes() == (b / "trajectory.csv").read_bytes()


def test_csv_float_format(tmp_path):
    out = run(parse_config({**FLOW, "c": 3.0}), tmp_path / "r")[1]
    text = (out / "flow.csv").read_bytes()
    assert b"\r\n" in text
    d1 = _rows(out / "flow.csv")[1]["d_k"]
    assert d1 == format(1 / (1 + 1 / 3), ".17g")


def test_module_error_leaves_no_partial_output(tmp_path):
    cfg = parse_config({**CLASSIFY, "c": [1.0, 2.0, 3.0]})
    code, out, _ = run(cfg, tmp_path / "r")
    assert code == 1
    assert not out.exists()
    assert not list(tmp_path.glob(".cannings-*"))


# main

def test_main_exit_codes(tmp_path, capsys):
    assert main(["flow", "--config", json.dumps(FLOW), "--out", str(tmp_path / "ok")]) == 0
    assert capsys.readouterr().out.strip() == str(tmp_path / "ok")
    assert main(["flow", "--config", json.dumps({"c": 1.0, "mu": "x"})]) == 2
    assert "config error at $.mu" in capsys.readouterr().err
    bad = {**CLASSIFY, "c": [1.0, 2.0, 3.0]}
    assert main(["classify", "--config", json.dumps(bad), "--out", str(tmp_path / "bad")]) == 1
    assert main(["flow", "--config", json.dumps({**FLOW, "command": "classify"})]) == 2


def test_main_reads_config_file(tmp_path):
    p = tmp_path / "flow.json"
    p.write_text(json.dumps({k: v for k, v in FLOW.items() if k != "command"}))
    assert main(["flow", "--config", str(p), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "flow.csv").exists()


def test_threads_env_default(monkeypatch):
    monkeypatch.setenv(cli.THREADS_ENV, "3")
    assert cli._threads(None) == 3
    monkeypatch.setenv(cli.THREADS_ENV, "zero")
    with pytest.raises(ConfigError):
        cli._threads(None)


# plot scripts

def test_plot_script_per_flow_csv(tmp_path):
    out = run(parse_config({**FLOW, "output": {"emit_plot_scripts": True}}), tmp_path / "r")[1]
    scripts = sorted(p.name for p in out.glob("*.gp"))
    assert scripts == ["flow.gp"]
    text = (out / "flow.gp").read_text()
    assert "'flow.csv'" in text and "smooth cumulative" in text


def test_hazard_plot_script(tmp_path):
    (tmp_path / "hazard.csv").write_text("quantity,closed_form,monte_carlo,mc_se\r\nfirst_moment,0.3,0.31,0.01\r\n")
    made = emit_plot_scripts(tmp_path)
    assert [p.name for p in made] == ["hazard.gp"]
    assert "yerrorbars" in made[0].read_text()


def test_nothing_to_plot(tmp_path):
    with pytest.raises(ValueError, match="nothing to plot"):
        emit_plot_scripts(tmp_path)
    with pytest.raises(ValueError, match="nothing to plot"):
        emit_plot_scripts(tmp_path / "missing")

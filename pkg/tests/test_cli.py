import csv
import json
import math

import pytest

from neckcalib import cli
from neckcalib.cli import (CSV_COLUMNS, EXIT_CONFIG, EXIT_FINDING, EXIT_NUMERIC, EXIT_OK,
                           apply_override, emit_config, load_config, main, resolve_config, run)


def write(tmp_path, cfg, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def strip_wall(obj):
    if isinstance(obj, dict):
        return {k: strip_wall(v) for k, v in obj.items() if k != "wall_time_s"}
    if isinstance(obj, list):
        return [strip_wall(v) for v in obj]
    return obj


JLT = {"preset": "jlt", "a": [1, 1], "fiber_window": 3}


def test_calibrate_exit_ok(tmp_path):
    out = tmp_path / "r.json"
    cfg = {"spec": JLT, "command": {"name": "calibrate", "samples": 2000}, "seed": 42}
    code = main(["calibrate", "--config", write(tmp_path, cfg), "--out", str(out),
                 "--threads", "2"])
    assert code == EXIT_OK
    rep = json.loads(out.read_text())
    assert rep["result"]["max_ratio"] <= 1 + 1e-9
    assert rep["seed"] == 42 and rep["coordinatewise_min"] is True
    assert rep["config"]["spec"]["profiles"][0] == {"kind": "jlt", "params": [1.0]}
    assert set(rep["result"]) >= {"spec_id", "samples", "max_ratio", "argmax", "violations",
                                  "seed", "wall_time_s"}


def test_probe_exit_finding(tmp_path, capsys):
    cfg = {"spec": {"preset": "probe"},
           "command": {"name": "probe", "points": 100, "restarts": 5, "iters": 50}}
    assert main(["probe", "--config", write(tmp_path, cfg), "--seed", "3"]) == EXIT_FINDING
    rep = json.loads(capsys.readouterr().out)
    assert rep["result"]["witness"]["ratio"] >= math.sqrt(2) - 1e-6
    assert rep["status"] == "finding"


def test_selftest_exit_ok(capsys):
    assert main(["selftest", "--set", "command.instances=100"]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["result"]["passed"] is True
    w = rep["result"]["uncorrected_witness"]
    assert w["weighted"] == pytest.approx(5.0) and w["full_product"] == pytest.approx(60.0)


def test_unreadable_config(tmp_path, capsys):
    assert main(["calibrate", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert err.count("\n") == 1 and "config" in err


@pytest.mark.parametrize("cfg", [
    {"spec": JLT, "command": {"name": "probe"}},
    {"spec": JLT, "command": {"name": "calibrate", "bogus": 1}},
    {"command": {"name": "calibrate"}},
    {"spec": {"preset": "nope"}},
    {"spec": JLT, "seed": -1},
    {"spec": JLT, "command": {"name": "calibrate", "points": -5}},
    {"spec": {"preset": "jlt", "a": [1, -1]}},
])
def test_config_errors(tmp_path, cfg):
    assert main(["calibrate", "--config", write(tmp_path, cfg)]) == EXIT_CONFIG


def test_malformed_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["calibrate", "--config", str(p)]) == EXIT_CONFIG


def test_degenerate_chart_exit_numeric(tmp_path):
    spec = {"geometry": {"kind": "immersed-chart",
                         "expressions": [[{"coef": 1.0, "factors": []}],
                                         [{"coef": 0.0, "factors": []}]],
                         "domain": {"lo": [0.0], "hi": [1.0]}},
            "profiles": [{"kind": "constant", "params": [1.0]}] * 2,
            "fiber_domain": {"lo": [-1.0], "hi": [1.0]}}
    assert main(["calibrate", "--config", write(tmp_path, {"spec": spec})]) == EXIT_NUMERIC


def test_volume_compare_and_minimality(capsys):
    args = ["--set", "spec.preset=jlt", "--set", "spec.a=[1,1,1]", "--threads", "1"]
    assert main(["volume-compare", *args, "--set", "command.trials=5",
                 "--set", "command.nodes=12"]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["result"]["min_excess"] >= -1e-9 and len(rep["result"]["entries"]) == 5
    assert main(["minimality", *args]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["result"]["defect"] <= 1e-4


def test_find_q0_and_comass_max(capsys):
    assert main(["find-q0", "--set", "spec.preset=probe"]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["result"]["q0"] == [0.0] and rep["result"]["coordinatewise_min"] is False
    assert main(["comass-max", "--set", "spec.preset=jlt", "--set", "spec.a=[1,1]",
                 "--set", "command.restarts=10"]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert 1 - 1e-6 <= rep["result"]["ratio"] <= 1 + 1e-9


def test_csv_output(tmp_path):
    out = tmp_path / "r.csv"
    cfg = {"spec": JLT, "command": {"name": "calibrate", "points": 50}}
    assert main(["calibrate", "--config", write(tmp_path, cfg), "--format", "csv",
                 "--out", str(out)]) == EXIT_OK
    rows = list(csv.reader(out.read_text().splitlines()))
    assert rows[0] == CSV_COLUMNS and len(rows) == 2
    assert rows[1][0] == "calibrate" and float(rows[1][6]) <= 1 + 1e-9


def test_config_round_trip():
    cfg = {"spec": JLT, "command": {"name": "calibrate", "points": 10}, "seed": 7,
           "output": {"path": None, "format": "json"}}
    assert load_config(emit_config(cfg)) == cfg
    resolved, _ = resolve_config("calibrate", cfg)
    again, _ = resolve_config("calibrate", load_config(emit_config(resolved)))
    assert again == resolved


def test_set_override_paths():
    cfg = {}
    apply_override(cfg, "spec.a=[1, 2]")
    apply_override(cfg, "command.name=probe")
    apply_override(cfg, "seed=5")
    assert cfg == {"spec": {"a": [1, 2]}, "command": {"name": "probe"}, "seed": 5}
    with pytest.raises(cli.ConfigError):
        apply_override(cfg, "nokey")


def test_reports_identical_across_threads():
    cfg = {"spec": {"preset": "probe"}, "command": {"name": "calibrate", "points": 700,
                                                    "max_violations": 20}, "seed": 9}
    _, a, ta = run("calibrate", cfg, threads=1)
    _, b, tb = run("calibrate", cfg, threads=4)
    assert json.dumps(strip_wall(a)) == json.dumps(strip_wall(b))
    assert a["result"]["violation_count"] > 0

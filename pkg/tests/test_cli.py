import json
import os

import pytest
from click.testing import CliRunner

from hypolab.cli import main

runner = CliRunner()


def test_models_list():
    res = runner.invoke(main, ["models", "list"])
    assert res.exit_code == 0
    names = res.output.split()
    assert len(names) == 6
    assert "hodgkin-huxley" in names and "toy-cascade" in names


def test_models_show_plain_and_json():
    res = runner.invoke(main, ["models", "show", "spiral"])
    assert res.exit_code == 0
    assert "dims: observed=1 internal=1 noise=1" in res.output
    res = runner.invoke(main, ["models", "show", "spiral", "--json"])
    spec = json.loads(res.output)
    assert spec["name"] == "spiral"
    assert len(spec["f"]) == 1


def test_unknown_model_is_usage_error():
    res = runner.invoke(main, ["models", "show", "nope"])
    assert res.exit_code == 2


def test_simulate_outputs_and_manifest(tmp_path):
    out = tmp_path / "run"
    args = ["simulate", "toy-cascade", "--point", "1,1,0", "--dt", "0.01",
            "--horizon", "2.0", "--seed", "42", "--out", str(out)]
    res = runner.invoke(main, args)
    assert res.exit_code == 0, res.output
    names = sorted(os.listdir(out))
    assert names == ["manifest.json", "path.csv", "report.json"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert manifest["seed"] == 42
    assert {f["name"] for f in manifest["files"]} == {"path.csv",
                                                      "report.json"}
    for f in manifest["files"]:
        assert f["bytes"] == os.path.getsize(out / f["name"])
    report = json.loads((out / "report.json").read_text())
    assert report["nodes"] == 201
    assert report["diverged_step"] == -1


def test_simulate_reruns_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["simulate", "toy-cascade", "--point", "1,1,0", "--dt", "0.01",
            "--horizon", "1.0", "--seed", "7"]
    assert runner.invoke(main, args + ["--out", str(a)]).exit_code == 0
    assert runner.invoke(main, args + ["--out", str(b)]).exit_code == 0
    assert (a / "path.csv").read_bytes() == (b / "path.csv").read_bytes()


def test_simulate_grid_extraction(tmp_path):
    out = tmp_path / "run"
    res = runner.invoke(main, ["simulate", "toy-cascade", "--point", "1,1,0",
                               "--dt", "0.01", "--horizon", "3.0", "--seed",
                               "3", "--grid-period", "1.0", "--out",
                               str(out)])
    assert res.exit_code == 0
    assert (out / "grid.csv").exists()
    grid_lines = (out / "grid.csv").read_text().splitlines()
    assert len(grid_lines) == 1 + 4
    report = json.loads((out / "report.json").read_text())
    assert report["grid"]["count"] == 4


def test_simulate_seed_generated_when_absent(tmp_path):
    out = tmp_path / "run"
    res = runner.invoke(main, ["simulate", "toy-cascade", "--point", "1,1,0",
                               "--dt", "0.01", "--horizon", "0.2", "--out",
                               str(out)])
    assert res.exit_code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert isinstance(manifest["seed"], int)


def test_sigma_flag_variants():
    for sigma in ["const:2", "diag:0.5",
                  '[["(add (const 1) (z 1))"]]']:
        res = runner.invoke(main, ["models", "show", "toy-cascade"])
        assert res.exit_code == 0
        res = runner.invoke(main, ["simulate", "toy-cascade", "--point",
                                   "1,1,0", "--dt", "0.01", "--horizon",
                                   "0.1", "--seed", "1", "--sigma", sigma])
        assert res.exit_code == 0, (sigma, res.output)
    res = runner.invoke(main, ["simulate", "toy-cascade", "--point", "1,1,0",
                               "--sigma", "wat:1"])
    assert res.exit_code == 2


def test_bad_point_is_usage_error():
    res = runner.invoke(main, ["simulate", "toy-cascade", "--point", "1,2"])
    assert res.exit_code == 2
    res = runner.invoke(main, ["simulate", "toy-cascade", "--point",
                               "equilibrium:x"])
    assert res.exit_code == 2


def test_config_file_fills_defaults_but_flags_win(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"dt": 0.01, "horizon": 0.5}))
    out = tmp_path / "run"
    res = runner.invoke(main, ["simulate", "toy-cascade", "--point", "1,1,0",
                               "--seed", "1", "--horizon", "1.0",
                               "--config", str(cfg), "--out", str(out)])
    assert res.exit_code == 0
    report = json.loads((out / "report.json").read_text())
    # dt came from the config, horizon from the explicit flag
    assert report["dt"] == 0.01
    assert report["nodes"] == 101


def test_kronecker_exit_codes(tmp_path):
    res = runner.invoke(main, ["kronecker", "--period", "1",
                               "--target-period", "1.4142135623730951",
                               "--eps", "0.1"])
    assert res.exit_code == 0
    assert "n=5 m=7" in res.output
    res = runner.invoke(main, ["kronecker", "--period", "1",
                               "--target-period", "1.4142135623730951",
                               "--eps", "1e-9", "--bound", "40"])
    assert res.exit_code == 1
    res = runner.invoke(main, ["kronecker", "--period", "2",
                               "--target-period", "3", "--eps", "0.1"])
    assert res.exit_code == 2


def test_hoermander_pass_and_fail_exits(tmp_path):
    out = tmp_path / "run"
    res = runner.invoke(main, ["hoermander", "toy-cascade", "--out",
                               str(out)])
    assert res.exit_code == 0
    assert "rank: 3/3" in res.output
    report = json.loads((out / "report.json").read_text())
    assert report["verdict"] == "pass"
    res = runner.invoke(main, ["hoermander", "toy-cascade", "--sigma",
                               "const:0"])
    assert res.exit_code == 1


def test_control_writes_plan(tmp_path):
    out = tmp_path / "run"
    res = runner.invoke(main, ["control", "spiral", "--point", "0.3,-0.2,0.25",
                               "--target", "1,0;0", "--out", str(out)])
    assert res.exit_code == 0, res.output
    lines = (out / "plan_path.csv").read_text().splitlines()
    assert lines[0] == "t,rho1,rhodot1"
    assert len(lines) > 10
    assert (out / "manifest.json").exists()


def test_certify_verdict_exit(tmp_path):
    ok = runner.invoke(main, ["certify", "spiral", "--point", "0.3,-0.2,0.25",
                              "--target", "1,0;0", "--n-max", "700"])
    assert ok.exit_code == 0, ok.output
    assert "verdict: pass" in ok.output
    bad = runner.invoke(main, ["certify", "spiral", "--point",
                               "0.3,-0.2,0.25", "--target", "1,0;0",
                               "--eps", "1e-12", "--n-max", "5"])
    assert bad.exit_code == 1


def test_recurrence_returns_and_histogram(tmp_path):
    out = tmp_path / "run"
    res = runner.invoke(main, ["recurrence", "toy-cascade", "--op", "returns",
                               "--point", "1,1,0", "--dt", "0.01",
                               "--horizon", "50", "--seed", "5", "--box",
                               "[[-2,-2,-2],[2,2,2]]", "--out", str(out)])
    assert res.exit_code == 0, res.output
    report = json.loads((out / "report.json").read_text())
    assert report["visits"] > 0
    res = runner.invoke(main, ["recurrence", "toy-cascade", "--op",
                               "histogram", "--point", "1,1,0", "--dt",
                               "0.01", "--horizon", "50", "--seed", "5",
                               "--bins", "5"])
    assert res.exit_code == 0
    assert "cells: 125" in res.output


def test_recurrence_ergodic_needs_two_starts():
    res = runner.invoke(main, ["recurrence", "toy-cascade", "--op", "ergodic",
                               "--point", "1,1,0", "--periods", "100",
                               "--dt", "0.01"])
    assert res.exit_code == 2


def test_recurrence_drift_needs_box():
    res = runner.invoke(main, ["recurrence", "toy-cascade", "--op", "drift",
                               "--point", "4,0,0"])
    assert res.exit_code == 2

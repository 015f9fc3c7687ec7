"""Batch front end: config validation, artifacts, determinism, exit codes."""

import copy
import json

import pytest

from relaxtoc import cli, errors


def _toy_config(**extra):
    cfg = copy.deepcopy(cli.list_examples()["toy-integrator"]["default_config"])
    cfg.update(extra)
    return cfg


def test_catalog_is_stable():
    cat = cli.list_examples()
    assert set(cat) == {"toy-integrator", "quenching-ex1", "blowup-ex2"}
    for entry in cat.values():
        assert entry["description"]
        assert entry["default_config"]["task"] in cli.TASKS
        assert entry["default_config"]["schema_version"] == cli.SCHEMA_VERSION


def test_toy_solve_artifacts(tmp_path):
    assert cli.run(_toy_config(), out_dir=tmp_path) == 0
    payload = json.loads((tmp_path / "solve_result.json").read_text())
    assert payload["schema_version"] == cli.SCHEMA_VERSION
    assert payload["task"] == "solve" and payload["seed"] == 0
    assert payload["w"] == pytest.approx(1.0, abs=1e-3)
    assert payload["hit_status"] == "hit-target"
    header = (tmp_path / "trajectory.csv").read_text().splitlines()[0]
    assert header.startswith("t,")


def test_same_config_same_bytes(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.run(_toy_config(), out_dir=a) == 0
    assert cli.run(_toy_config(), out_dir=b) == 0
    for name in ("solve_result.json", "trajectory.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_seed_override_lands_in_payload(tmp_path):
    assert cli.run(_toy_config(), out_dir=tmp_path, seed=3) == 0
    payload = json.loads((tmp_path / "solve_result.json").read_text())
    assert payload["seed"] == 3


def test_config_errors_name_the_field(tmp_path):
    with pytest.raises(errors.ConfigError) as exc:
        cli.run({"schema_version": 1}, out_dir=tmp_path)
    assert exc.value.path == "task"

    with pytest.raises(errors.ConfigError) as exc:
        cli.run(_toy_config(task="dance"), out_dir=tmp_path)
    assert exc.value.path == "task"

    with pytest.raises(errors.ConfigError) as exc:
        cli.run(_toy_config(schema_version=99), out_dir=tmp_path)
    assert exc.value.path == "schema_version"

    with pytest.raises(errors.ConfigError) as exc:
        cli.run(_toy_config(y0=[0.0, 0.0]), out_dir=tmp_path)
    assert exc.value.path == "y0"

    with pytest.raises(errors.ConfigError) as exc:
        cli.run(_toy_config(alpha="lots"), out_dir=tmp_path)
    assert exc.value.path == "alpha"

    cfg = {
        "schema_version": 1,
        "task": "monotonicity-sweep",
        "system": {"example": "quenching-ex1"},
        "sweep": {"case": "i", "h_sign": 1.0},
    }
    with pytest.raises(errors.ConfigError) as exc:
        cli.run(cfg, out_dir=tmp_path)
    assert exc.value.path == "sweep.h_sign"


def test_ladder_csv_agrees_with_json(tmp_path):
    cfg = _toy_config(task="ladder")
    cfg["ladder"] = {"alpha0": 0.4, "ratio": 0.5, "k_max": 3}
    assert cli.run(cfg, out_dir=tmp_path) == 0
    trace = json.loads((tmp_path / "ladder_trace.json").read_text())
    rows = (tmp_path / "ladder.csv").read_text().splitlines()
    assert rows[0] == "k,alpha,w"
    assert len(rows) == 1 + len(trace["ws"])
    for k, line in enumerate(rows[1:]):
        _, alpha_s, w_s = line.split(",")
        assert float(alpha_s) == pytest.approx(trace["alphas"][k], rel=1e-15)
        assert float(w_s) == pytest.approx(trace["ws"][k], rel=1e-15)
    assert trace["w_star"] >= trace["ws"][-1] - 1e-12


def test_envelope_sweep_runs_clean(tmp_path):
    cfg = copy.deepcopy(cli.list_examples()["blowup-ex2"]["default_config"])
    cfg["sweep"]["samples"] = 5
    assert cli.run(cfg, out_dir=tmp_path) == 0
    payload = json.loads((tmp_path / "barrier_sweep.json").read_text())
    assert payload["ok"] is True and payload["failures"] == 0
    assert len(payload["entries"]) == 5
    assert (tmp_path / "barrier_table.csv").exists()


def test_monotonicity_sweep_runs_clean(tmp_path):
    cfg = {
        "schema_version": 1,
        "task": "monotonicity-sweep",
        "seed": 0,
        "system": {"example": "quenching-ex1"},
        "sweep": {"case": "i", "samples": 4},
    }
    assert cli.run(cfg, out_dir=tmp_path) == 0
    payload = json.loads((tmp_path / "monotonicity_sweep.json").read_text())
    assert payload["ok"] is True and len(payload["entries"]) == 4


def test_verify_bound_violation_is_exit_one(tmp_path):
    cfg = copy.deepcopy(cli.list_examples()["quenching-ex1"]["default_config"])
    cfg["solver"] = {"n_cells": 6, "multi_starts": 2}
    # an unreachable residual bound turns the report into a failure without
    # making the run itself erroneous
    cfg["verify"] = {"max_hamiltonian_residual": 0.0}
    assert cli.run(cfg, out_dir=tmp_path) == 1
    payload = json.loads((tmp_path / "pmp_report.json").read_text())
    assert payload["hamiltonian_residual"] > 0.0
    assert payload["quenching_conclusions"]["ok"] is True


def test_main_exit_codes(tmp_path, capsys):
    cfg_path = tmp_path / "toy.json"
    cfg_path.write_text(json.dumps(_toy_config()))
    assert cli.main(["run", str(cfg_path), "--out", str(tmp_path / "out")]) == 0

    assert cli.main(["run", str(tmp_path / "nope.json")]) == 2
    assert "cannot read config" in capsys.readouterr().err

    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["run", str(bad)]) == 2
    assert "not valid JSON" in capsys.readouterr().err

    wrong = tmp_path / "wrong.json"
    wrong.write_text(json.dumps(_toy_config(task="dance")))
    assert cli.main(["run", str(wrong)]) == 2
    assert "config error: task" in capsys.readouterr().err


def test_main_lists_catalog(capsys):
    assert cli.main(["list-examples"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert set(out) == set(cli.list_examples())

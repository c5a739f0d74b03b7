"""YAML configuration handling and the command-line interface."""

import csv
import os

import numpy as np
import pytest

from openanneal import ConfigError, ValidityError, eval_schedule
from openanneal.cli import main
from openanneal.config import (OUTPUT_DIR_ENV, RunConfig, emit_config,
                               load_problem_file, load_schedule_csv,
                               parse_config)

BASE = {"problem": "chain2", "temperature_GHz": 2.62}


def write_yaml(tmp_path, text, name="run.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_defaults_fill_unspecified_keys():
    cfg = parse_config(None, dict(BASE))
    assert cfg.problem == "chain2"
    assert cfg.temperature_GHz == 2.62
    assert cfg.t_f_ns == 1000.0
    assert cfg.g2 == 1e-3
    assert cfg.omega_c_GHz == 4.0
    assert cfg.schedule == "linear"
    assert cfg.grid_points == 101
    assert cfg.m_levels is None
    assert cfg.rebuild_every == 1
    assert cfg.output_dir == "out"


def test_cli_overrides_win_over_the_file(tmp_path):
    path = write_yaml(tmp_path, "problem: chain2\ntemperature_GHz: 1.0\n"
                                "t_f_ns: 50\n")
    cfg = parse_config(path, {"temperature_GHz": 2.0, "t_f_ns": None})
    assert cfg.temperature_GHz == 2.0   # override wins
    assert cfg.t_f_ns == 50.0           # None overrides are ignored


def test_emit_round_trips(tmp_path):
    cfg = parse_config(None, dict(BASE, t_f_ns=250.0, g2=5e-4, levels=3,
                                  m_levels=6, s_star=0.25, workers=2))
    path = write_yaml(tmp_path, emit_config(cfg), "echo.yaml")
    assert parse_config(path) == cfg


def test_unknown_keys_are_rejected(tmp_path):
    path = write_yaml(tmp_path, "problem: chain2\ntemperature_GHz: 1.0\n"
                                "tol_degg: 1e-8\n")
    with pytest.raises(ConfigError, match="tol_degg"):
        parse_config(path)


def test_missing_required_key_is_named():
    with pytest.raises(ConfigError,
                       match="missing required config key: temperature_GHz"):
        parse_config(None, {"problem": "chain2"})


@pytest.mark.parametrize("key,value", [
    ("grid_points", 1),
    ("dt_safety", 0.0),
    ("dt_safety", 1.5),
    ("g2", -1.0),
    ("g2", True),
    ("levels", 0),
    ("s_star", 2.0),
    ("tol_deg", 1.0),
    ("n_trajectories", 0),
    ("temperature_GHz", "hot"),
])
def test_bad_values_name_the_offending_key(key, value):
    with pytest.raises(ConfigError, match=f"config key '{key}'"):
        parse_config(None, dict(BASE, **{key: value}))


def test_integers_are_coerced_to_floats():
    cfg = parse_config(None, dict(problem="chain2", temperature_GHz=3))
    assert isinstance(cfg.temperature_GHz, float)
    assert cfg.temperature_GHz == 3.0


def test_missing_referenced_files_are_errors(tmp_path):
    with pytest.raises(ConfigError, match="neither a builtin"):
        parse_config(None, dict(BASE, problem="no_such_problem"))
    with pytest.raises(ConfigError, match="schedule"):
        parse_config(None, dict(BASE, schedule=str(tmp_path / "missing.csv")))
    with pytest.raises(ConfigError, match="config file not found"):
        parse_config(str(tmp_path / "absent.yaml"))
    bad = write_yaml(tmp_path, "- just\n- a list\n")
    with pytest.raises(ConfigError, match="YAML mapping"):
        parse_config(bad)


def test_empty_config_file_uses_overrides(tmp_path):
    path = write_yaml(tmp_path, "")
    cfg = parse_config(path, dict(BASE))
    assert cfg.problem == "chain2"


def test_physical_wiring_of_derived_objects():
    cfg = parse_config(None, dict(BASE, t_f_ns=77.0, g2=2e-3,
                                  omega_c_GHz=5.0, m_levels=3,
                                  dt_safety=0.02, grid_points=11))
    spec = cfg.spec()
    assert spec.n == 2 and spec.t_f == 77.0
    bath = cfg.bath(spec)
    assert bath.beta == pytest.approx(1.0 / (2 * np.pi * 2.62), rel=1e-15)
    assert bath.omega_c == pytest.approx(2 * np.pi * 5.0, rel=1e-15)
    assert bath.g2 == 2e-3
    assert len(bath.coupling_ops) == 2
    opts = cfg.stepper()
    assert opts.eta == 0.02 and opts.m_levels == 3
    grid = cfg.grid()
    assert grid.size == 11 and grid[0] == 0.0 and grid[-1] == 1.0
    assert eval_schedule(cfg.schedule_obj(), 0.0)[0] == pytest.approx(2 * np.pi)


def test_problem_file_defines_a_spec(tmp_path):
    path = write_yaml(tmp_path, "n: 2\nh: [0.1, -0.2]\nJ:\n  - [0, 1, -1.0]\n",
                      "prob.yaml")
    n, h, J = load_problem_file(path)
    assert n == 2
    assert np.array_equal(h, [0.1, -0.2])
    assert J == {(0, 1): -1.0}
    cfg = parse_config(None, dict(BASE, problem=path))
    spec = cfg.spec()
    assert spec.n == 2 and spec.J == {(0, 1): -1.0}


@pytest.mark.parametrize("text,fragment", [
    ("h: [0.1]\n", "'n' must be"),
    ("n: 2\nh: [0.1]\n", "list of 2 numbers"),
    ("n: 1\nh: [0.1]\nJ:\n  - [0, 1]\n", "each J entry"),
    ("n: 2\nh: [0, 0]\nJ:\n  - [0, 1, 1.0]\n  - [0, 1, 2.0]\n", "duplicate"),
    ("n: 1\nh: [0.1]\nextra: 5\n", "unknown keys"),
])
def test_problem_file_errors(tmp_path, text, fragment):
    path = write_yaml(tmp_path, text, "bad.yaml")
    with pytest.raises(ConfigError, match=fragment):
        load_problem_file(path)


def test_schedule_csv_maps_ghz_to_angular(tmp_path):
    path = tmp_path / "sched.csv"
    path.write_text("s,A_GHz,B_GHz\n0,4,0\n0.5,2,1\n1,0,2\n")
    sched = load_schedule_csv(str(path))
    A0, B0 = eval_schedule(sched, 0.0)[:2]
    A1, B1 = eval_schedule(sched, 1.0)[:2]
    assert A0 == pytest.approx(8 * np.pi) and B0 == 0.0
    assert A1 == 0.0 and B1 == pytest.approx(4 * np.pi)
    cfg = parse_config(None, dict(BASE, schedule=str(path)))
    assert eval_schedule(cfg.schedule_obj(), 0.5)[1] == pytest.approx(2 * np.pi)


@pytest.mark.parametrize("text,fragment", [
    ("s,A,B\n0,1,0\n1,0,1\n", "header"),
    ("s,A_GHz,B_GHz\n0,1,0\n0.5,1,1\n0.5,0,1\n", "row 4"),
    ("s,A_GHz,B_GHz\n0.1,1,0\n1,0,1\n", "first s must be 0"),
    ("s,A_GHz,B_GHz\n0,1,0\n0.9,0,1\n", "last s must be 1"),
    ("s,A_GHz,B_GHz\n0,1\n1,0,1\n", "expected 3 columns"),
    ("s,A_GHz,B_GHz\n0,1,x\n1,0,1\n", "row 2"),
    ("s,A_GHz,B_GHz\n0,1,0\n", "at least two rows"),
])
def test_schedule_csv_errors(tmp_path, text, fragment):
    path = tmp_path / "sched.csv"
    path.write_text(text)
    with pytest.raises(ConfigError, match=fragment):
        load_schedule_csv(str(path))


def test_output_dir_env_wins(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "envout"))
    cfg = parse_config(None, dict(BASE, output_dir=str(tmp_path / "flagout")))
    assert cfg.resolved_output_dir() == str(tmp_path / "envout")
    monkeypatch.delenv(OUTPUT_DIR_ENV)
    assert cfg.resolved_output_dir() == str(tmp_path / "flagout")


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


FAST = ["--temperature-ghz", "2.62", "--t-f-ns", "5", "--grid-points", "5",
        "--rebuild-every", "8"]


def test_cli_solve_ame_writes_roundtrippable_outputs(tmp_path, monkeypatch,
                                                     capsys):
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path))
    assert main(["solve-ame", "--problem", "chain1", *FAST]) == 0
    header, rows = read_csv(tmp_path / "ame.csv")
    assert header == ["s", "pop_0", "trace_err"]
    assert len(rows) == 5
    s_vals = [float(r[0]) for r in rows]
    assert s_vals == list(np.linspace(0.0, 1.0, 5))
    for r in rows:
        for cell in r:
            assert ("%.17g" % float(cell)) == cell  # 17 digits round-trip
    assert (tmp_path / "ame.png").stat().st_size > 0
    assert "final ground-state population" in capsys.readouterr().out


def test_cli_run_trajectories_schema(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path))
    rc = main(["run-trajectories", "--problem", "chain1", *FAST,
               "--trajectories", "4", "--chunk-size", "2", "--levels", "2",
               "--seed", "7"])
    assert rc == 0
    header, rows = read_csv(tmp_path / "ensemble.csv")
    assert header == ["s", "mean_pop_0", "stderr_pop_0",
                      "mean_pop_1", "stderr_pop_1"]
    assert len(rows) == 5
    header, _ = read_csv(tmp_path / "jumps.csv")
    assert header == ["trajectory_id", "s_jump", "channel_alpha", "omega",
                      "pre_gs_overlap", "post_gs_overlap"]
    header, _ = read_csv(tmp_path / "jump_histogram.csv")
    assert header == ["net_jumps", "count"]
    for name in ("ensemble.png", "jump_histogram.png"):
        assert (tmp_path / name).stat().st_size > 0
    assert "R=4 trajectories" in capsys.readouterr().out


def test_cli_compare_reports_agreement(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path))
    rc = main(["compare", "--problem", "chain1", *FAST,
               "--trajectories", "4", "--chunk-size", "4"])
    assert rc == 0
    header, rows = read_csv(tmp_path / "compare.csv")
    assert header == ["s", "ame_pop_0", "mean_pop_0", "stderr_pop_0",
                      "abs_dev_0", "pass"]
    assert all(r[-1] in ("0", "1") for r in rows)
    assert (tmp_path / "compare.png").stat().st_size > 0
    assert "grid points" in capsys.readouterr().out


def test_cli_bench_writes_report(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path))
    rc = main(["bench", "--n-min", "1", "--n-max", "2",
               "--temperature-ghz", "2.62", "--t-f-ns", "10"])
    assert rc == 0
    header, rows = read_csv(tmp_path / "bench.csv")
    assert header == ["n", "N", "t_ame_step", "t_traj_step", "ratio"]
    assert [r[0] for r in rows] == ["1", "2"]
    assert (tmp_path / "bench.txt").stat().st_size > 0
    assert (tmp_path / "bench.png").stat().st_size > 0
    assert "cost scaling report" in capsys.readouterr().out
    assert main(["bench", "--n-min", "2", "--n-max", "2",
                 "--temperature-ghz", "2.62"]) == 1


def test_cli_usage_problems_exit_1(capsys):
    assert main(["solve-ame", "--bogus", "1"]) == 1
    assert "configuration error" in capsys.readouterr().err
    assert main([]) == 1
    assert main(["solve-ame", "--problem", "chain1",
                 "--temperature-ghz", "2.62", "--grid-points", "1"]) == 1


def test_cli_validity_errors_exit_2(monkeypatch, capsys):
    import openanneal.cli as cli_mod
    monkeypatch.setattr(cli_mod, "_run_ame",
                        lambda cfg: (_ for _ in ()).throw(ValidityError("boom")))
    rc = main(["solve-ame", "--problem", "chain1",
               "--temperature-ghz", "2.62", "--output-dir", "/tmp/oa-test"])
    assert rc == 2
    assert "validity error: boom" in capsys.readouterr().err

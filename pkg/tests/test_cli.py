import json

import numpy as np
import pytest
import yaml

from flowshoot.cli import (
    ConfigError,
    RunConfig,
    build_context,
    config_from_dict,
    config_to_dict,
    execute,
    main,
    parse_config,
)
from flowshoot.density import InitialKind, TargetKind
from flowshoot.flowfield import FlowKind

TINY = {
    "flow": {"kind": "zero"},
    "initial": {"kind": "point", "x0": [0.0, 0.0]},
    "target": {"kind": "point", "center": [1.0, 0.0], "s": 1.0},
    "n_agents": 1,
    "dt": 0.05,
    "grid": {"resolution": 64},
    "optimizer": {"max_iter": 40},
}


def write_config(tmp_path, data, name="config.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return path


# --- parsing and validation ---------------------------------------------------

def test_minimal_config_fills_defaults(tmp_path):
    path = write_config(tmp_path, {"flow": {"kind": "circle"}, "target": {"kind": "point"}})
    cfg = parse_config(path)
    assert cfg.flow.kind is FlowKind.CIRCLE
    assert cfg.target.kind is TargetKind.POINT_GAUSSIAN
    assert cfg.target.center == (10.0, -10.0) and cfg.target.s == 10.0
    assert cfg.initial.kind is InitialKind.POINT and cfg.initial.x0 == (-10.0, 10.0)
    assert cfg.n_agents == 1 and cfg.dt == 0.001 and cfg.sigma == 1.0
    assert cfg.lambda_b == 10.0 and cfg.domain_radius == 20.0
    assert cfg.grid.resolution == 500
    assert cfg.optimizer.max_iter == 300 and cfg.optimizer.grad_tol == 1e-6


def test_unknown_key_rejected(tmp_path):
    path = write_config(tmp_path, {"flows": {"kind": "circle"}})
    with pytest.raises(ConfigError, match="flows"):
        parse_config(path)
    path2 = write_config(tmp_path, {"optimizer": {"memoryy": 3}}, "c2.yaml")
    with pytest.raises(ConfigError, match="memoryy"):
        parse_config(path2)


def test_negative_penalty_rejected():
    with pytest.raises(ConfigError, match="lambda_b must be >= 0"):
        config_from_dict({"lambda_b": -1.0})


def test_bad_dt_rejected():
    with pytest.raises(ConfigError, match="dt"):
        config_from_dict({"dt": 0.3})


def test_missing_file_rejected(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        parse_config(tmp_path / "nope.yaml")


def test_round_trip_is_identity(tmp_path):
    cfg = config_from_dict({
        "flow": {"kind": "gyre", "epsilon": 0.2},
        "initial": {"kind": "circle_formation", "radius": 2.0},
        "target": {"kind": "ring", "r0": 6.0, "s": 1.5},
        "homotopy": [0.5, 1.0],
        "n_agents": 7,
    })
    path = write_config(tmp_path, config_to_dict(cfg))
    again = parse_config(path)
    assert again == cfg
    assert config_to_dict(again) == config_to_dict(cfg)


def test_homotopy_schedule_validation():
    with pytest.raises(ConfigError, match="homotopy"):
        config_from_dict({"homotopy": [1.0, 0.5]})
    with pytest.raises(ConfigError, match="homotopy"):
        config_from_dict({"homotopy": [0.5, 0.75]})


def test_command_defaults_differ():
    mc = config_from_dict({}, command="montecarlo")
    assert mc.flow.kind is FlowKind.REPELLER
    assert mc.dt == 0.01 and mc.trials == 20
    assert mc.initial.kind is InitialKind.CIRCLE_FORMATION
    plan = config_from_dict({}, command="plan")
    assert plan.flow.kind is FlowKind.CIRCLE and plan.dt == 0.001


# --- plan execution --------------------------------------------------------------

def test_plan_writes_artifacts(tmp_path):
    cfg = config_from_dict(TINY)
    out = tmp_path / "run"
    report = execute("plan", cfg, out_dir=out)
    for name in ("report.json", "trajectory.csv", "baseline_trajectory.csv",
                 "flow_along_path.csv", "flow_quiver.csv",
                 "target_density.csv", "final_density.csv"):
        assert (out / name).exists(), name

    data = json.loads((out / "report.json").read_text())
    assert data["command"] == "plan"
    # savings recomputable from the report's own fields
    assert abs(data["savings"] - (1.0 - data["E_whf"] / data["E_str"])) <= 1e-12
    assert data["converged"] is True
    assert data["artifacts"]["trajectory"] == "trajectory.csv"

    rows = (out / "trajectory.csv").read_text().splitlines()
    assert len(rows) == 1 + 21 * cfg.n_agents  # header + (K+1) * N

    dens_rows = (out / "final_density.csv").read_text().splitlines()
    assert len(dens_rows) == 2 + cfg.grid.resolution
    assert len(dens_rows[2].split(",")) == cfg.grid.resolution


def test_plan_deterministic_across_directories(tmp_path):
    cfg = config_from_dict(TINY)
    execute("plan", cfg, out_dir=tmp_path / "a")
    execute("plan", cfg, out_dir=tmp_path / "b")
    ra = json.loads((tmp_path / "a" / "report.json").read_text())
    rb = json.loads((tmp_path / "b" / "report.json").read_text())
    del ra["wall_time"], rb["wall_time"]
    assert json.dumps(ra, sort_keys=True) == json.dumps(rb, sort_keys=True)
    assert (tmp_path / "a" / "trajectory.csv").read_text() == (tmp_path / "b" / "trajectory.csv").read_text()


def test_report_config_echo_is_self_contained(tmp_path):
    cfg = config_from_dict(TINY)
    execute("plan", cfg, out_dir=tmp_path / "first")
    echoed = json.loads((tmp_path / "first" / "report.json").read_text())["config"]
    execute("plan", config_from_dict(echoed), out_dir=tmp_path / "second")
    ra = json.loads((tmp_path / "first" / "report.json").read_text())
    rb = json.loads((tmp_path / "second" / "report.json").read_text())
    del ra["wall_time"], rb["wall_time"]
    assert ra == rb


def test_plan_zero_flow_recovers_displacement(tmp_path):
    cfg = config_from_dict(TINY)
    execute("plan", cfg, out_dir=tmp_path / "run")
    report = json.loads((tmp_path / "run" / "report.json").read_text())
    assert report["E_whf"] == pytest.approx(1.0, rel=0.02)  # |q0|^2 = |(1,0)|^2


# --- other subcommands -------------------------------------------------------------

def test_montecarlo_outputs(tmp_path):
    cfg = config_from_dict({**TINY, "flow": {"kind": "repeller"},
                            "initial": {"kind": "circle_formation"},
                            "target": {"kind": "ring", "r0": 5.0, "s": 1.0},
                            "n_agents": 2, "trials": 2,
                            "optimizer": {"max_iter": 5}}, command="montecarlo")
    out = tmp_path / "mc"
    execute("montecarlo", cfg, out_dir=out)
    trials = (out / "trials.csv").read_text().splitlines()
    assert trials[0] == "trial,seed,E_whf,final_objective,iterations,converged"
    assert len(trials) == 3
    scatter = (out / "q0_scatter.csv").read_text().splitlines()
    assert scatter[0] == "trial,agent,qx,qy"
    assert len(scatter) == 1 + 2 * 2
    energies = (out / "energy_hist.csv").read_text().splitlines()
    assert energies[0] == "trial,E_whf"
    assert len(energies) == 3


def test_homotopy_outputs(tmp_path):
    cfg = config_from_dict({**TINY, "flow": {"kind": "circle"},
                            "initial": {"kind": "circle_formation"},
                            "target": {"kind": "ring", "r0": 5.0, "s": 1.0},
                            "n_agents": 2, "homotopy": [0.5, 1.0],
                            "optimizer": {"max_iter": 5}}, command="homotopy")
    out = tmp_path / "homo"
    report = execute("homotopy", cfg, out_dir=out)
    assert "direct_E_whf" in report.extras and "homotopy_E_whf" in report.extras
    rows = (out / "homotopy.csv").read_text().splitlines()
    assert rows[0] == "run,alpha,E_whf,final_objective,iterations,converged"
    assert rows[1].startswith("direct,")
    assert len(rows) == 1 + 1 + 2  # header, direct, two stages


def test_verify_linear_passes(tmp_path):
    cfg = config_from_dict({}, command="verify-linear")
    report = execute("verify-linear", cfg, out_dir=tmp_path / "v")
    assert report.converged is True
    assert all(c["passed"] for c in report.extras["checks"])


# --- main() entry point ---------------------------------------------------------------

def test_main_plan_and_exit_codes(tmp_path):
    cfg_path = write_config(tmp_path, TINY)
    code = main(["plan", "--config", str(cfg_path), "--out", str(tmp_path / "out")])
    assert code == 0
    assert (tmp_path / "out" / "report.json").exists()


def test_main_config_error_exit_code(tmp_path):
    bad = write_config(tmp_path, {"lambda_b": -5})
    assert main(["plan", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert main(["plan", "--config", str(tmp_path / "missing.yaml")]) == 1


def test_main_flag_overrides(tmp_path):
    cfg_path = write_config(tmp_path, {**TINY, "flow": {"kind": "circle"},
                                       "initial": {"kind": "circle_formation"},
                                       "target": {"kind": "ring", "r0": 5.0, "s": 1.0},
                                       "optimizer": {"max_iter": 3}})
    out = tmp_path / "out"
    code = main(["plan", "--config", str(cfg_path), "--out", str(out),
                 "--seed", "7", "--n-agents", "3", "--flow", "repeller"])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["seed"] == 7
    assert report["config"]["n_agents"] == 3
    assert report["config"]["flow"]["kind"] == "repeller"


def test_main_numerical_failure_exit_code(tmp_path):
    # agent so far out that the shear flow overflows mid-horizon
    bad = write_config(tmp_path, {**TINY, "flow": {"kind": "vertical"},
                                  "initial": {"kind": "point", "x0": [0.0, 1.0e307]}})
    assert main(["plan", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_env_var_out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("FLOWSHOOT_OUT", str(tmp_path / "envout"))
    monkeypatch.chdir(tmp_path)
    cfg = config_from_dict(TINY)
    execute("plan", cfg)
    assert (tmp_path / "envout" / "plan" / "report.json").exists()

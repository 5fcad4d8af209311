"""Command-line interface: config parsing, experiment drivers, result files.

Subcommands
-----------
plan          one optimization run; writes trajectory/density CSVs + report
sweep         repeats plan for ensemble sizes N in {1, 5, 10, 25, 50}
montecarlo    seeded multi-start study (per-trial records, scatter, energies)
homotopy      flow-strength continuation vs. the direct single-stage run
table1        single-agent benchmark across the six catalog flows
verify-linear closed-form linear-flow self test

A run is configured by one YAML file (every key optional; unknown keys are
rejected) plus a handful of override flags.  The resolved configuration is
echoed into ``report.json`` so any report can reproduce its own run.
Numeric outputs are deterministic for a fixed config and seed; only the
``wall_time`` fields vary between repeats.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import linear_oracle
from .density import (
    GridSpec,
    InitialKind,
    InitialSpec,
    TargetKind,
    TargetSpec,
    kde,
    sample_initial,
    target_density,
)
from .dynamics import IntegrationError, Trajectory, straight_line_swarm
from .flowfield import FlowKind, FlowSpec, eval_flow, flow_from_name
from .objective import (
    ObjectiveContext,
    control_energy,
    evaluate,
    make_objective_callables,
    savings,
)
from .optimizer import OptimizerOptions, homotopy_solve, lbfgs_minimize, monte_carlo_study

ENV_OUT_DIR = "FLOWSHOOT_OUT"
SWEEP_AGENT_COUNTS = (1, 5, 10, 25, 50)
TABLE1_FLOWS = ("circle", "attractor", "repeller", "vertical", "stagnation", "gyre")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2
EXIT_IO = 3


class ConfigError(ValueError):
    """Invalid or unknown configuration input (exit code 1)."""


class NumericalError(RuntimeError):
    """A numerical stage failed irrecoverably (exit code 2)."""


@dataclass
class RunConfig:
    flow: FlowSpec
    initial: InitialSpec
    target: TargetSpec
    n_agents: int
    sigma: float
    lambda_b: float
    domain_radius: float
    T: float
    dt: float
    grid: GridSpec
    optimizer: OptimizerOptions
    homotopy: tuple | None
    seed: int
    trials: int
    out_dir: str | None = None


@dataclass
class RunReport:
    command: str
    config: dict
    E_whf: float | None = None
    E_str: float | None = None
    savings: float | None = None
    kl_final: float | None = None
    penalty_final: float | None = None
    iterations: int | None = None
    converged: bool | None = None
    objective_history: list = field(default_factory=list)
    artifacts: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config": self.config,
            "E_whf": self.E_whf,
            "E_str": self.E_str,
            "savings": self.savings,
            "kl_final": self.kl_final,
            "penalty_final": self.penalty_final,
            "iterations": self.iterations,
            "converged": self.converged,
            "objective_history": list(self.objective_history),
            "artifacts": dict(self.artifacts),
            "extras": self.extras,
            "wall_time": self.wall_time,
        }


# ---------------------------------------------------------------------------
# configuration schema

_BASE_DEFAULTS: dict = {
    "flow": {"kind": "circle", "alpha": 1.0},
    "initial": {"kind": "point", "x0": [-10.0, 10.0]},
    "target": {"kind": "point_gaussian", "center": [10.0, -10.0], "s": 10.0},
    "n_agents": 1,
    "sigma": 1.0,
    "lambda_b": 10.0,
    "domain_radius": 20.0,
    "T": 1.0,
    "dt": 0.001,
    "grid": {"bounds": [-20.0, 20.0, -20.0, 20.0], "resolution": 500},
    "optimizer": {
        "memory": 10,
        "grad_tol": 1e-6,
        "f_rel_tol": 1e-10,
        "max_iter": 300,
        "wolfe_c1": 1e-4,
        "wolfe_c2": 0.9,
        "fd_mode": "forward",
    },
    "homotopy": None,
    "seed": 0,
    "trials": 20,
}

# heavier study commands default to the coarse time step and formation setups
_COMMAND_DEFAULTS: dict = {
    "plan": {},
    "table1": {},
    "sweep": {
        "flow": {"kind": "circle"},
        "initial": {"kind": "circle_formation", "radius": 1.0},
        "target": {"kind": "ring", "center": [0.0, 0.0], "r0": 8.0, "s": 1.0},
        "n_agents": 10,
        "dt": 0.01,
    },
    "montecarlo": {
        "flow": {"kind": "repeller"},
        "initial": {"kind": "circle_formation", "radius": 1.0},
        "target": {"kind": "ring", "center": [0.0, 0.0], "r0": 8.0, "s": 1.0},
        "n_agents": 10,
        "dt": 0.01,
    },
    "homotopy": {
        "flow": {"kind": "circle"},
        "initial": {"kind": "circle_formation", "radius": 1.0},
        "target": {"kind": "ring", "center": [0.0, 0.0], "r0": 8.0, "s": 1.0},
        "n_agents": 10,
        "dt": 0.01,
        "homotopy": [0.75, 1.0],
    },
    "verify-linear": {},
}

_TARGET_ALIASES = {"point": "point_gaussian", "gaussian": "point_gaussian"}
_INITIAL_ALIASES = {"circle": "circle_formation", "cloud": "gaussian_cloud"}

CONFIG_KEY_HELP = """\
configuration keys (YAML; every key optional, unknown keys rejected):
  flow.kind             circle|attractor|repeller|vertical|stagnation|gyre|linear|zero
  flow.alpha            homotopy multiplier in [0, 1] (default 1.0)
  flow.epsilon          gyre modulation strength (default 0.1)
  flow.omega            gyre angular frequency (default 2*pi)
  flow.matrix           2x2 matrix rows, linear flows only
  initial.kind          point|circle_formation|gaussian_cloud
  initial.x0            point position, e.g. [-10, 10]
  initial.radius        circle_formation radius (> 0, default 1.0)
  initial.center        gaussian_cloud center (default [0, 0])
  initial.spread        gaussian_cloud std deviation (> 0, default 1.0)
  target.kind           point_gaussian|ring|heart
  target.center         target center (defaults: point [10,-10], others [0,0])
  target.s              width parameter (> 0)
  target.r0             ring mean radius (> 0, default 8.0)
  target.l              heart spatial scale (> 0, default 0.15)
  n_agents              number of agents (>= 1)
  sigma                 KDE bandwidth (> 0, default 1.0)
  lambda_b              boundary penalty weight (>= 0, default 10.0)
  domain_radius         penalty radius D (> 0, default 20.0)
  T                     time horizon (default 1.0)
  dt                    sample step; must divide T (default 0.001)
  grid.bounds           [xmin, xmax, ymin, ymax] (default [-20, 20, -20, 20])
  grid.resolution       cells per side (>= 16, default 500)
  optimizer.memory      L-BFGS history pairs (>= 1, default 10)
  optimizer.grad_tol    gradient infinity-norm tolerance (default 1e-6)
  optimizer.f_rel_tol   stagnation threshold (default 1e-10)
  optimizer.max_iter    iteration cap (default 300)
  optimizer.wolfe_c1    Armijo constant (default 1e-4)
  optimizer.wolfe_c2    curvature constant (default 0.9)
  optimizer.fd_mode     forward|central finite differences (default forward)
  homotopy              ascending alpha schedule ending at 1, e.g. [0.75, 1.0]
  seed                  base random seed (default 0)
  trials                montecarlo trial count (default 20; full-scale studies use 100)
  out_dir               output directory (flag --out and $FLOWSHOOT_OUT override)

environment:
  FLOWSHOOT_OUT         base directory for default outputs
"""


def _reject_unknown(section: dict, allowed: tuple, where: str) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown config key '{key}' in {where}")


def _number(section: dict, key: str, where: str, minimum=None, strict=False) -> float:
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}{key} must be a number")
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(f"{where}{key} must be finite")
    if minimum is not None:
        if strict and value <= minimum:
            raise ConfigError(f"{where}{key} must be > {minimum}")
        if not strict and value < minimum:
            raise ConfigError(f"{where}{key} must be >= {minimum}")
    return value


def _integer(section: dict, key: str, where: str, minimum: int) -> int:
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}{key} must be an integer")
    if value < minimum:
        raise ConfigError(f"{where}{key} must be >= {minimum}")
    return value


def _pair(section: dict, key: str, where: str) -> tuple:
    value = section[key]
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{where}{key} must be a 2-element list")
    try:
        return (float(value[0]), float(value[1]))
    except (TypeError, ValueError):
        raise ConfigError(f"{where}{key} must contain numbers") from None


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _build_flow(section: dict) -> FlowSpec:
    _reject_unknown(section, ("kind", "alpha", "epsilon", "omega", "matrix"), "flow")
    if "kind" not in section:
        raise ConfigError("flow.kind is required")
    name = str(section["kind"]).lower()
    params: dict = {}
    if "alpha" in section:
        alpha = _number(section, "alpha", "flow.")
        if not 0.0 <= alpha <= 1.0:
            raise ConfigError("flow.alpha must lie in [0, 1]")
        params["alpha"] = alpha
    if "epsilon" in section:
        params["epsilon"] = _number(section, "epsilon", "flow.")
    if "omega" in section:
        params["omega"] = _number(section, "omega", "flow.")
    if "matrix" in section:
        params["matrix"] = section["matrix"]
    try:
        return flow_from_name(name, **params)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"flow: {exc}") from None


def _build_initial(section: dict) -> InitialSpec:
    _reject_unknown(section, ("kind", "x0", "radius", "center", "spread"), "initial")
    name = str(section.get("kind", "point")).lower()
    name = _INITIAL_ALIASES.get(name, name)
    try:
        kind = InitialKind(name)
    except ValueError:
        raise ConfigError(f"initial.kind must be one of {[k.value for k in InitialKind]}") from None
    kwargs: dict = {"kind": kind}
    if "x0" in section:
        kwargs["x0"] = _pair(section, "x0", "initial.")
    if "center" in section:
        kwargs["center"] = _pair(section, "center", "initial.")
    if "radius" in section:
        kwargs["radius"] = _number(section, "radius", "initial.", minimum=0.0, strict=True)
    if "spread" in section:
        kwargs["spread"] = _number(section, "spread", "initial.", minimum=0.0, strict=True)
    try:
        return InitialSpec(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"initial: {exc}") from None


def _build_target(section: dict) -> TargetSpec:
    _reject_unknown(section, ("kind", "center", "s", "r0", "l"), "target")
    name = str(section.get("kind", "point_gaussian")).lower()
    name = _TARGET_ALIASES.get(name, name)
    try:
        kind = TargetKind(name)
    except ValueError:
        raise ConfigError(f"target.kind must be one of {[k.value for k in TargetKind]}") from None
    kwargs: dict = {"kind": kind}
    if "center" in section:
        kwargs["center"] = _pair(section, "center", "target.")
    else:
        kwargs["center"] = (10.0, -10.0) if kind is TargetKind.POINT_GAUSSIAN else (0.0, 0.0)
    if "s" in section:
        kwargs["s"] = _number(section, "s", "target.", minimum=0.0, strict=True)
    else:
        kwargs["s"] = {"point_gaussian": 10.0, "ring": 1.0, "heart": 3.0}[kind.value]
    if "r0" in section:
        kwargs["r0"] = _number(section, "r0", "target.", minimum=0.0, strict=True)
    if "l" in section:
        kwargs["l"] = _number(section, "l", "target.", minimum=0.0, strict=True)
    try:
        return TargetSpec(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"target: {exc}") from None


def _build_grid(section: dict) -> GridSpec:
    _reject_unknown(section, ("bounds", "resolution"), "grid")
    bounds = section.get("bounds", [-20.0, 20.0, -20.0, 20.0])
    if not isinstance(bounds, (list, tuple)) or len(bounds) != 4:
        raise ConfigError("grid.bounds must be [xmin, xmax, ymin, ymax]")
    try:
        xmin, xmax, ymin, ymax = (float(v) for v in bounds)
    except (TypeError, ValueError):
        raise ConfigError("grid.bounds must contain numbers") from None
    resolution = _integer(section, "resolution", "grid.", 16) if "resolution" in section else 500
    try:
        return GridSpec(xmin, xmax, ymin, ymax, resolution)
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from None


def _build_optimizer(section: dict) -> OptimizerOptions:
    allowed = ("memory", "grad_tol", "f_rel_tol", "max_iter", "wolfe_c1", "wolfe_c2", "fd_mode")
    _reject_unknown(section, allowed, "optimizer")
    kwargs: dict = {}
    if "memory" in section:
        kwargs["memory"] = _integer(section, "memory", "optimizer.", 1)
    if "max_iter" in section:
        kwargs["max_iter"] = _integer(section, "max_iter", "optimizer.", 1)
    for key in ("grad_tol", "f_rel_tol", "wolfe_c1", "wolfe_c2"):
        if key in section:
            kwargs[key] = _number(section, key, "optimizer.", minimum=0.0, strict=True)
    if "fd_mode" in section:
        mode = str(section["fd_mode"]).lower()
        if mode not in ("forward", "central"):
            raise ConfigError("optimizer.fd_mode must be 'forward' or 'central'")
        kwargs["fd_mode"] = mode
    try:
        return OptimizerOptions(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"optimizer: {exc}") from None


def config_from_dict(data: dict, command: str = "plan") -> RunConfig:
    """Validate a raw mapping against the schema and resolve all defaults."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    allowed = (
        "flow", "initial", "target", "n_agents", "sigma", "lambda_b", "domain_radius",
        "T", "dt", "grid", "optimizer", "homotopy", "seed", "trials", "out_dir",
    )
    _reject_unknown(data, allowed, "config root")
    for key in ("flow", "initial", "target", "grid", "optimizer"):
        if key in data and not isinstance(data[key], dict):
            raise ConfigError(f"{key} must be a mapping")
    merged = _deep_merge(_deep_merge(_BASE_DEFAULTS, _COMMAND_DEFAULTS.get(command, {})), data)

    lambda_b = _number(merged, "lambda_b", "", minimum=0.0)
    domain_radius = _number(merged, "domain_radius", "", minimum=0.0, strict=True)
    sigma = _number(merged, "sigma", "", minimum=0.0, strict=True)
    T = _number(merged, "T", "", minimum=0.0, strict=True)
    dt = _number(merged, "dt", "", minimum=0.0, strict=True)
    if abs(round(T / dt) * dt - T) > 1e-12 * max(1.0, T) or round(T / dt) < 1:
        raise ConfigError(f"dt = {dt} must divide T = {T}")
    n_agents = _integer(merged, "n_agents", "", 1)
    seed = _integer(merged, "seed", "", 0)
    trials = _integer(merged, "trials", "", 1)

    homotopy = merged.get("homotopy")
    if homotopy is not None:
        if not isinstance(homotopy, (list, tuple)) or not homotopy:
            raise ConfigError("homotopy must be a non-empty list of alphas")
        try:
            homotopy = tuple(float(a) for a in homotopy)
        except (TypeError, ValueError):
            raise ConfigError("homotopy must contain numbers") from None
        if any(b <= a for a, b in zip(homotopy, homotopy[1:])):
            raise ConfigError("homotopy schedule must be strictly ascending")
        if not 0.0 < homotopy[0] <= 1.0 or abs(homotopy[-1] - 1.0) > 1e-12:
            raise ConfigError("homotopy schedule must lie in (0, 1] and end at 1")

    out_dir = merged.get("out_dir")
    if out_dir is not None and not isinstance(out_dir, str):
        raise ConfigError("out_dir must be a string path")

    return RunConfig(
        flow=_build_flow(merged["flow"]),
        initial=_build_initial(merged["initial"]),
        target=_build_target(merged["target"]),
        n_agents=n_agents,
        sigma=sigma,
        lambda_b=lambda_b,
        domain_radius=domain_radius,
        T=T,
        dt=dt,
        grid=_build_grid(merged["grid"]),
        optimizer=_build_optimizer(merged["optimizer"]),
        homotopy=homotopy,
        seed=seed,
        trials=trials,
        out_dir=out_dir,
    )


def parse_config(path, command: str = "plan") -> RunConfig:
    """Load and validate a YAML config file, resolving all defaults."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = yaml.safe_load(p.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config parse error in {p}: {exc}") from None
    return config_from_dict(data, command)


def config_to_dict(cfg: RunConfig) -> dict:
    """Canonical mapping form of a resolved config (without out_dir).

    Feeding the result back through :func:`config_from_dict` reproduces the
    identical RunConfig.
    """
    flow: dict = {"kind": cfg.flow.kind.value, "alpha": cfg.flow.alpha}
    if cfg.flow.kind is FlowKind.GYRE:
        flow["epsilon"] = cfg.flow.epsilon
        flow["omega"] = cfg.flow.omega
    if cfg.flow.kind is FlowKind.LINEAR:
        flow["matrix"] = [list(row) for row in cfg.flow.matrix]
    initial: dict = {"kind": cfg.initial.kind.value}
    if cfg.initial.kind is InitialKind.POINT:
        initial["x0"] = list(cfg.initial.x0)
    elif cfg.initial.kind is InitialKind.CIRCLE_FORMATION:
        initial["radius"] = cfg.initial.radius
    else:
        initial["center"] = list(cfg.initial.center)
        initial["spread"] = cfg.initial.spread
    target: dict = {"kind": cfg.target.kind.value, "center": list(cfg.target.center), "s": cfg.target.s}
    if cfg.target.kind is TargetKind.RING:
        target["r0"] = cfg.target.r0
    if cfg.target.kind is TargetKind.HEART:
        target["l"] = cfg.target.l
    return {
        "flow": flow,
        "initial": initial,
        "target": target,
        "n_agents": cfg.n_agents,
        "sigma": cfg.sigma,
        "lambda_b": cfg.lambda_b,
        "domain_radius": cfg.domain_radius,
        "T": cfg.T,
        "dt": cfg.dt,
        "grid": {
            "bounds": [cfg.grid.xmin, cfg.grid.xmax, cfg.grid.ymin, cfg.grid.ymax],
            "resolution": cfg.grid.resolution,
        },
        "optimizer": {
            "memory": cfg.optimizer.memory,
            "grad_tol": cfg.optimizer.grad_tol,
            "f_rel_tol": cfg.optimizer.f_rel_tol,
            "max_iter": cfg.optimizer.max_iter,
            "wolfe_c1": cfg.optimizer.wolfe_c1,
            "wolfe_c2": cfg.optimizer.wolfe_c2,
            "fd_mode": cfg.optimizer.fd_mode,
        },
        "homotopy": list(cfg.homotopy) if cfg.homotopy is not None else None,
        "seed": cfg.seed,
        "trials": cfg.trials,
    }


def build_context(cfg: RunConfig) -> ObjectiveContext:
    try:
        target = target_density(cfg.target, cfg.grid)
        positions = sample_initial(cfg.initial, cfg.n_agents, cfg.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return ObjectiveContext(
        flow=cfg.flow,
        target=target,
        initial_positions=positions,
        grid=cfg.grid,
        sigma=cfg.sigma,
        lambda_b=cfg.lambda_b,
        domain_radius=cfg.domain_radius,
        T=cfg.T,
        dt=cfg.dt,
    )


# ---------------------------------------------------------------------------
# artifact emission

def _write_flow_along_path(path, traj: Trajectory, flow: FlowSpec) -> None:
    w = eval_flow(flow, traj.times[:, None], traj.positions)
    with open(path, "w") as fh:
        fh.write("t,agent,wx,wy\n")
        for k, t in enumerate(traj.times):
            for i in range(traj.n_agents):
                fh.write(f"{t:.12g},{i},{w[k, i, 0]:.12g},{w[k, i, 1]:.12g}\n")


def _write_flow_quiver(path, flow: FlowSpec, grid: GridSpec, points_per_side: int = 25) -> None:
    xs = np.linspace(grid.xmin, grid.xmax, points_per_side)
    ys = np.linspace(grid.ymin, grid.ymax, points_per_side)
    X, Y = np.meshgrid(xs, ys)
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    w = eval_flow(flow, 0.0, pts)
    with open(path, "w") as fh:
        fh.write("x,y,wx,wy\n")
        for (x, y), (wx, wy) in zip(pts, w):
            fh.write(f"{x:.12g},{y:.12g},{wx:.12g},{wy:.12g}\n")


def emit_results(report: RunReport, out_dir, files: dict | None = None) -> list[str]:
    """Write the artifact files and then report.json recording their paths.

    ``files`` maps a relative file name to a writer callable taking the full
    path.  Artifact paths in the report are relative to the report location.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for name, writer in (files or {}).items():
            writer(out / name)
            report.artifacts[Path(name).stem] = name
            written.append(name)
        report.artifacts["report"] = "report.json"
        with open(out / "report.json", "w") as fh:
            json.dump(report.to_dict(), fh, indent=2)
            fh.write("\n")
        written.append("report.json")
    except OSError as exc:
        raise OSError(f"failed writing results to {out}: {exc}") from exc
    return written


# ---------------------------------------------------------------------------
# experiment drivers

def _optimize(cfg: RunConfig, ctx: ObjectiveContext, q0_init: np.ndarray | None = None):
    f, g, _ = make_objective_callables(ctx, mode=cfg.optimizer.fd_mode)
    q0 = np.zeros((ctx.n_agents, 2)) if q0_init is None else q0_init
    result = lbfgs_minimize(f, g, q0, cfg.optimizer)
    final = evaluate(result.q0_opt, ctx)
    if final.failed:
        raise NumericalError("optimized initial velocities produced a failed integration")
    return result, final


def _baseline(cfg: RunConfig, ctx: ObjectiveContext, traj: Trajectory) -> Trajectory:
    """Straight-line comparison paths: to the target center for point
    targets, otherwise to the optimized terminal positions."""
    if cfg.target.kind is TargetKind.POINT_GAUSSIAN:
        ends = np.tile(np.asarray(cfg.target.center), (ctx.n_agents, 1))
    else:
        ends = traj.positions[-1]
    return straight_line_swarm(ctx.initial_positions, ends, T=cfg.T, dt=cfg.dt, flow=ctx.flow)


def _plan_files(cfg, ctx, traj, baseline, final_density) -> dict:
    return {
        "trajectory.csv": traj.to_csv,
        "baseline_trajectory.csv": baseline.to_csv,
        "flow_along_path.csv": lambda p: _write_flow_along_path(p, traj, ctx.flow),
        "flow_quiver.csv": lambda p: _write_flow_quiver(p, ctx.flow, cfg.grid),
        "target_density.csv": ctx.target.to_csv,
        "final_density.csv": final_density.to_csv,
    }


def _plan_core(cfg: RunConfig, command: str) -> tuple[RunReport, ObjectiveContext, dict]:
    t0 = time.perf_counter()
    ctx = build_context(cfg)
    result, final = _optimize(cfg, ctx)
    traj = final.trajectory
    energy_opt = control_energy(traj, ctx.flow)
    baseline = _baseline(cfg, ctx, traj)
    energy_straight = control_energy(baseline, ctx.flow)
    report = RunReport(
        command=command,
        config=config_to_dict(cfg),
        E_whf=energy_opt,
        E_str=energy_straight,
        savings=savings(energy_opt, energy_straight),
        kl_final=final.kl_term,
        penalty_final=final.penalty_term,
        iterations=result.iterations,
        converged=result.converged,
        objective_history=result.objective_history,
        wall_time=time.perf_counter() - t0,
    )
    files = _plan_files(cfg, ctx, traj, baseline, kde(traj.positions[-1], cfg.sigma, cfg.grid))
    return report, ctx, files


def _run_plan(cfg: RunConfig, out_dir) -> RunReport:
    report, _, files = _plan_core(cfg, "plan")
    emit_results(report, out_dir, files)
    print(
        f"plan: flow={cfg.flow.kind.value} N={cfg.n_agents} "
        f"E_whf={report.E_whf:.4f} E_str={report.E_str:.4f} savings={report.savings:.4f} "
        f"iterations={report.iterations}"
    )
    return report


def _run_sweep(cfg: RunConfig, out_dir) -> RunReport:
    t0 = time.perf_counter()
    rows = []
    failures = []
    out = Path(out_dir)
    for n in SWEEP_AGENT_COUNTS:
        sub_cfg = replace(cfg, n_agents=n)
        try:
            sub_report, _, sub_files = _plan_core(sub_cfg, "plan")
            emit_results(sub_report, out / f"n{n:02d}", sub_files)
            rows.append({
                "N": n,
                "E_whf": sub_report.E_whf,
                "E_str": sub_report.E_str,
                "savings": sub_report.savings,
                "iterations": sub_report.iterations,
                "converged": sub_report.converged,
            })
            print(f"sweep: N={n} savings={sub_report.savings:.4f}")
        except (NumericalError, IntegrationError) as exc:
            failures.append({"N": n, "error": str(exc)})
            print(f"sweep: N={n} FAILED ({exc})", file=sys.stderr)

    def write_table(path):
        with open(path, "w") as fh:
            fh.write("N,E_whf,E_str,savings,iterations,converged\n")
            for r in rows:
                fh.write(
                    f"{r['N']},{float(r['E_whf'])!r},{float(r['E_str'])!r},{float(r['savings'])!r},"
                    f"{r['iterations']},{int(r['converged'])}\n"
                )

    report = RunReport(
        command="sweep",
        config=config_to_dict(cfg),
        extras={"rows": rows, "failures": failures},
        wall_time=time.perf_counter() - t0,
    )
    emit_results(report, out_dir, {"sweep.csv": write_table})
    if failures:
        raise NumericalError(f"{len(failures)} sweep stage(s) failed; partial outputs retained")
    return report


def _run_montecarlo(cfg: RunConfig, out_dir) -> RunReport:
    t0 = time.perf_counter()
    ctx = build_context(cfg)
    records = monte_carlo_study(ctx, cfg.trials, base_seed=cfg.seed, opts=cfg.optimizer)
    finite = [r.E_whf for r in records if math.isfinite(r.E_whf)]

    def write_trials(path):
        with open(path, "w") as fh:
            fh.write("trial,seed,E_whf,final_objective,iterations,converged\n")
            for k, r in enumerate(records):
                fh.write(
                    f"{k},{r.seed},{float(r.E_whf)!r},{float(r.final_objective)!r},"
                    f"{r.iterations},{int(r.converged)}\n"
                )

    def write_scatter(path):
        with open(path, "w") as fh:
            fh.write("trial,agent,qx,qy\n")
            for k, r in enumerate(records):
                for i in range(ctx.n_agents):
                    fh.write(f"{k},{i},{float(r.q0_opt[i, 0])!r},{float(r.q0_opt[i, 1])!r}\n")

    def write_energies(path):
        with open(path, "w") as fh:
            fh.write("trial,E_whf\n")
            for k, r in enumerate(records):
                fh.write(f"{k},{float(r.E_whf)!r}\n")

    report = RunReport(
        command="montecarlo",
        config=config_to_dict(cfg),
        extras={
            "trials": cfg.trials,
            "energy_mean": float(np.mean(finite)) if finite else None,
            "energy_min": float(np.min(finite)) if finite else None,
            "energy_max": float(np.max(finite)) if finite else None,
            "errors": [r.error for r in records if r.error],
        },
        wall_time=time.perf_counter() - t0,
    )
    emit_results(report, out_dir, {
        "trials.csv": write_trials,
        "q0_scatter.csv": write_scatter,
        "energy_hist.csv": write_energies,
    })
    print(f"montecarlo: {cfg.trials} trials, mean E_whf = {report.extras['energy_mean']}")
    return report


def _run_homotopy(cfg: RunConfig, out_dir) -> RunReport:
    t0 = time.perf_counter()
    if cfg.flow.alpha != 1.0:
        raise ConfigError("homotopy requires flow.alpha = 1 (the schedule scales the flow)")
    ctx = build_context(cfg)
    schedule = cfg.homotopy or (0.75, 1.0)

    direct_result, direct_final = _optimize(cfg, ctx)
    direct_energy = control_energy(direct_final.trajectory, ctx.flow)

    homo_result = homotopy_solve(ctx, schedule, None, cfg.optimizer)
    homo_final = evaluate(homo_result.q0_opt, ctx)
    if homo_final.failed:
        raise NumericalError("homotopy solution produced a failed integration")
    homo_energy = control_energy(homo_final.trajectory, ctx.flow)

    rows = [{
        "run": "direct",
        "alpha": 1.0,
        "E_whf": direct_energy,
        "final_objective": direct_result.objective_history[-1],
        "iterations": direct_result.iterations,
        "converged": direct_result.converged,
    }]
    for idx, stage in enumerate(homo_result.stages, start=1):
        rows.append({
            "run": f"stage{idx}",
            "alpha": stage.alpha,
            "E_whf": stage.E_whf,
            "final_objective": stage.final_objective,
            "iterations": stage.iterations,
            "converged": stage.converged,
        })

    def write_table(path):
        with open(path, "w") as fh:
            fh.write("run,alpha,E_whf,final_objective,iterations,converged\n")
            for r in rows:
                fh.write(
                    f"{r['run']},{float(r['alpha'])!r},{float(r['E_whf'])!r},{float(r['final_objective'])!r},"
                    f"{r['iterations']},{int(r['converged'])}\n"
                )

    report = RunReport(
        command="homotopy",
        config=config_to_dict(cfg),
        E_whf=homo_energy,
        kl_final=homo_final.kl_term,
        penalty_final=homo_final.penalty_term,
        iterations=homo_result.iterations,
        converged=homo_result.converged,
        objective_history=homo_result.objective_history,
        extras={
            "schedule": list(schedule),
            "direct_E_whf": direct_energy,
            "homotopy_E_whf": homo_energy,
            "direct_final_objective": direct_result.objective_history[-1],
            "homotopy_final_objective": homo_result.objective_history[-1],
            "stages": rows[1:],
        },
        wall_time=time.perf_counter() - t0,
    )
    emit_results(report, out_dir, {
        "homotopy.csv": write_table,
        "trajectory.csv": homo_final.trajectory.to_csv,
    })
    print(f"homotopy: direct E_whf={direct_energy:.4f} vs schedule {list(schedule)} E_whf={homo_energy:.4f}")
    return report


def _table1_config(cfg: RunConfig, flow_name: str) -> RunConfig:
    """Single-agent benchmark fixture: start (-10, 10), Gaussian target at
    (10, -10) with width 10, unit KDE bandwidth."""
    return replace(
        cfg,
        flow=flow_from_name(flow_name),
        initial=InitialSpec(kind=InitialKind.POINT, x0=(-10.0, 10.0)),
        target=TargetSpec(kind=TargetKind.POINT_GAUSSIAN, center=(10.0, -10.0), s=10.0),
        n_agents=1,
        sigma=1.0,
        homotopy=None,
    )


# warm-start ladder for benchmark rows, as multiples of the displacement
# from the start to the target center
_BENCHMARK_START_SCALES = (0.0, 1.0, 1.25, 1.5)


def _benchmark_core(cfg: RunConfig) -> tuple[RunReport, ObjectiveContext, dict]:
    """One benchmark row: optimize from a fixed ladder of warm starts and keep
    the lowest-energy solution among runs with a near-best final objective.

    Oscillatory flows fold the terminal map, so distinct stationary paths can
    reach the target with very different control energies; a single zero
    initialization may land on an expensive branch.  The ladder is fixed and
    the selection deterministic, so repeated runs reproduce byte-identically.
    """
    t0 = time.perf_counter()
    ctx = build_context(cfg)
    displacement = np.asarray(cfg.target.center) - ctx.initial_positions
    candidates = []
    for scale in _BENCHMARK_START_SCALES:
        try:
            result, final = _optimize(cfg, ctx, q0_init=scale * displacement)
        except NumericalError:
            continue
        energy = control_energy(final.trajectory, ctx.flow)
        candidates.append((result, final, energy))
    if not candidates:
        raise NumericalError("every benchmark warm start failed to integrate")
    best_objective = min(r.objective_history[-1] for r, _, _ in candidates)
    window = best_objective + max(1e-2, 1e-3 * abs(best_objective))
    feasible = [c for c in candidates if c[0].objective_history[-1] <= window]
    result, final, energy_opt = min(feasible, key=lambda c: c[2])

    traj = final.trajectory
    baseline = _baseline(cfg, ctx, traj)
    energy_straight = control_energy(baseline, ctx.flow)
    report = RunReport(
        command="plan",
        config=config_to_dict(cfg),
        E_whf=energy_opt,
        E_str=energy_straight,
        savings=savings(energy_opt, energy_straight),
        kl_final=final.kl_term,
        penalty_final=final.penalty_term,
        iterations=result.iterations,
        converged=result.converged,
        objective_history=result.objective_history,
        extras={"warm_start_energies": [c[2] for c in candidates]},
        wall_time=time.perf_counter() - t0,
    )
    files = _plan_files(cfg, ctx, traj, baseline, kde(traj.positions[-1], cfg.sigma, cfg.grid))
    return report, ctx, files


def _run_table1(cfg: RunConfig, out_dir) -> RunReport:
    t0 = time.perf_counter()
    rows = []
    failures = []
    out = Path(out_dir)
    for flow_name in TABLE1_FLOWS:
        sub_cfg = _table1_config(cfg, flow_name)
        t_flow = time.perf_counter()
        try:
            sub_report, _, sub_files = _benchmark_core(sub_cfg)
            emit_results(sub_report, out / flow_name, sub_files)
            rows.append({
                "flow": flow_name,
                "E_whf": sub_report.E_whf,
                "E_str": sub_report.E_str,
                "savings": sub_report.savings,
                "runtime_s": time.perf_counter() - t_flow,
                "iterations": sub_report.iterations,
                "converged": sub_report.converged,
            })
            print(
                f"table1: {flow_name:<10} E_whf={sub_report.E_whf:9.2f} "
                f"E_str={sub_report.E_str:9.2f} savings={100 * sub_report.savings:6.2f}% "
                f"iterations={sub_report.iterations}"
            )
        except (NumericalError, IntegrationError) as exc:
            failures.append({"flow": flow_name, "error": str(exc)})
            print(f"table1: {flow_name} FAILED ({exc})", file=sys.stderr)

    def write_table(path):
        with open(path, "w") as fh:
            fh.write("flow,E_whf,E_str,savings,runtime_s,iterations,converged\n")
            for r in rows:
                fh.write(
                    f"{r['flow']},{float(r['E_whf'])!r},{float(r['E_str'])!r},{float(r['savings'])!r},"
                    f"{r['runtime_s']:.3f},{r['iterations']},{int(r['converged'])}\n"
                )

    report = RunReport(
        command="table1",
        config=config_to_dict(cfg),
        extras={"rows": rows, "failures": failures},
        wall_time=time.perf_counter() - t0,
    )
    emit_results(report, out_dir, {"table1.csv": write_table})
    if failures:
        raise NumericalError(f"{len(failures)} table1 flow(s) failed; partial outputs retained")
    return report


def _run_verify_linear(cfg: RunConfig, out_dir) -> RunReport:
    t0 = time.perf_counter()
    checks = linear_oracle.self_check(seed=cfg.seed, dt=cfg.dt)
    for name, passed, detail in checks:
        print(f"verify-linear: {'PASS' if passed else 'FAIL'} {name} ({detail})")
    report = RunReport(
        command="verify-linear",
        config=config_to_dict(cfg),
        converged=all(p for _, p, _ in checks),
        extras={"checks": [{"name": n, "passed": p, "detail": d} for n, p, d in checks]},
        wall_time=time.perf_counter() - t0,
    )
    emit_results(report, out_dir)
    if not report.converged:
        raise NumericalError("linear-oracle self test failed")
    return report


_RUNNERS = {
    "plan": _run_plan,
    "sweep": _run_sweep,
    "montecarlo": _run_montecarlo,
    "homotopy": _run_homotopy,
    "table1": _run_table1,
    "verify-linear": _run_verify_linear,
}


def execute(command: str, config: RunConfig, out_dir=None) -> RunReport:
    """Run one subcommand; writes its artifact files and returns the report."""
    if command not in _RUNNERS:
        raise ConfigError(f"unknown command '{command}'")
    resolved = out_dir or config.out_dir
    if resolved is None:
        base = os.environ.get(ENV_OUT_DIR, "runs")
        resolved = Path(base) / command
    return _RUNNERS[command](config, resolved)


# ---------------------------------------------------------------------------
# argument parsing

def _apply_overrides(data: dict, args) -> dict:
    if args.seed is not None:
        data["seed"] = args.seed
    if args.n_agents is not None:
        data["n_agents"] = args.n_agents
    if args.flow is not None:
        data["flow"] = {"kind": args.flow}
    if args.dt is not None:
        data["dt"] = args.dt
    if args.trials is not None:
        data["trials"] = args.trials
    if args.alpha_schedule is not None:
        try:
            data["homotopy"] = [float(v) for v in args.alpha_schedule.split(",") if v.strip()]
        except ValueError:
            raise ConfigError("--alpha-schedule must be comma-separated numbers") from None
    return data


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="flowshoot",
        description="Energy-optimal agent trajectory planning in background flows.",
        epilog=CONFIG_KEY_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    descriptions = {
        "plan": "run one optimization and write trajectory/density artifacts",
        "sweep": "repeat plan for N in {1, 5, 10, 25, 50} and tabulate savings",
        "montecarlo": "seeded multi-start study over random initial velocities",
        "homotopy": "flow-strength continuation vs. the direct run",
        "table1": "single-agent benchmark across the six catalog flows",
        "verify-linear": "closed-form linear-flow round-trip self test",
    }
    for name, desc in descriptions.items():
        p = sub.add_parser(name, help=desc, epilog=CONFIG_KEY_HELP,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", help="YAML config file (defaults used when omitted)")
        p.add_argument("--out", help="output directory (default $FLOWSHOOT_OUT/<command> or runs/<command>)")
        p.add_argument("--seed", type=int, help="override the base random seed")
        p.add_argument("--n-agents", type=int, help="override the agent count")
        p.add_argument("--flow", help="override the flow kind by name")
        p.add_argument("--dt", type=float, help="override the sample step")
        p.add_argument("--trials", type=int, help="override the montecarlo trial count")
        p.add_argument("--alpha-schedule", help="override the homotopy schedule, e.g. '0.75,1.0'")

    args = parser.parse_args(argv)
    try:
        if args.config is not None:
            path = Path(args.config)
            if not path.exists():
                raise ConfigError(f"config file not found: {path}")
            try:
                data = yaml.safe_load(path.read_text()) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"config parse error in {path}: {exc}") from None
        else:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError("config root must be a mapping")
        data = _apply_overrides(data, args)
        cfg = config_from_dict(data, args.command)
        execute(args.command, cfg, out_dir=args.out)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, IntegrationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())

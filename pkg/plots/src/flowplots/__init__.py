"""Publication-style figures from flowshoot's serialized run artifacts.

This package never calls the solver: its entire interface to the planning
pipeline is the documented CSV schemas.  Input roles are recognized by
their header columns:

    trajectory    t,agent,x,y,qx,qy
    flow samples  t,agent,wx,wy      (background velocity along a trajectory)
    quiver field  x,y,wx,wy          (background velocity on a point grid)
    q0 scatter    trial,agent,qx,qy
    energies      trial,E_whf
    sweep table   N,E_whf,E_str,savings,...

Four figure kinds are supported: trajectory overlays with flow quivers,
instantaneous control-effort curves, multi-start scatter + energy
histograms, and savings-vs-ensemble-size curves.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


class SchemaError(ValueError):
    """An input file does not match any documented CSV schema."""


class FigureKind(str, Enum):
    TRAJECTORY_QUIVER = "trajectory-quiver"
    EFFORT_CURVE = "effort-curve"
    MC_SCATTER_HIST = "mc-scatter-hist"
    SAVINGS_CURVE = "savings-curve"


@dataclass
class FigureRequest:
    kind: FigureKind
    inputs: list
    output: str
    bounds: tuple | None = None     # (xmin, xmax, ymin, ymax)
    quiver_step: int = 1            # keep every k-th quiver arrow
    style: dict = field(default_factory=dict)


_ROLE_COLUMNS = {
    "trajectory": {"t", "agent", "x", "y", "qx", "qy"},
    "flow_samples": {"t", "agent", "wx", "wy"},
    "quiver": {"x", "y", "wx", "wy"},
    "scatter": {"trial", "agent", "qx", "qy"},
    "energies": {"trial", "E_whf"},
}

_KIND_ROLES = {
    FigureKind.TRAJECTORY_QUIVER: {"trajectory"},
    FigureKind.EFFORT_CURVE: {"trajectory"},
    FigureKind.MC_SCATTER_HIST: {"scatter", "energies"},
    FigureKind.SAVINGS_CURVE: {"sweep"},
}


def _read_table(path) -> tuple[list, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"input file not found: {path}")
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[1] != len(header):
        raise SchemaError(f"{path}: {len(header)} header columns but {data.shape[1]} data columns")
    return header, data


def detect_role(header: list) -> str:
    cols = set(header)
    for role, wanted in _ROLE_COLUMNS.items():
        if cols == wanted:
            return role
    if "N" in cols and "savings" in cols:
        return "sweep"
    raise SchemaError(f"unrecognized column set: {sorted(cols)}")


def _columns(header, data, names, path):
    out = []
    for name in names:
        if name not in header:
            raise SchemaError(f"{path}: missing column '{name}'")
        out.append(data[:, header.index(name)])
    return out


def load_inputs(paths) -> dict:
    """Classify every input file by schema; trajectories keep their order
    (first = optimized, second = baseline overlay)."""
    loaded: dict = {"trajectory": []}
    for path in paths:
        header, data = _read_table(path)
        role = detect_role(header)
        if role == "trajectory":
            loaded["trajectory"].append((header, data, str(path)))
        else:
            loaded[role] = (header, data, str(path))
    return loaded


def _trajectory_arrays(header, data, path):
    t, agent, x, y = _columns(header, data, ("t", "agent", "x", "y"), path)
    agents = agent.astype(int)
    n = agents.max() + 1
    rows = len(t)
    if rows % n:
        raise SchemaError(f"{path}: rows do not factor into (K+1) x N")
    k1 = rows // n
    times = t.reshape(k1, n)[:, 0]
    xy = np.stack([x, y], axis=-1).reshape(k1, n, 2)
    return times, xy


def compute_effort(traj_header, traj_data, traj_path, flow=None) -> tuple[np.ndarray, np.ndarray]:
    """Instantaneous effort |dX/dt - w|^2 per agent from a trajectory table.

    dX/dt uses central differences at interior samples and second-order
    one-sided stencils at the ends.  ``flow`` is an optional flow-samples
    table aligned with the trajectory; without it the background velocity
    is taken as zero.
    """
    times, xy = _trajectory_arrays(traj_header, traj_data, traj_path)
    if len(times) < 3:
        raise SchemaError(f"{traj_path}: need at least 3 samples for differencing")
    dt = times[1] - times[0]
    dx = np.empty_like(xy)
    dx[1:-1] = (xy[2:] - xy[:-2]) / (2.0 * dt)
    dx[0] = (-3.0 * xy[0] + 4.0 * xy[1] - xy[2]) / (2.0 * dt)
    dx[-1] = (3.0 * xy[-1] - 4.0 * xy[-2] + xy[-3]) / (2.0 * dt)
    if flow is not None:
        fh, fd, fp = flow
        wx, wy = _columns(fh, fd, ("wx", "wy"), fp)
        w = np.stack([wx, wy], axis=-1).reshape(xy.shape)
        dx = dx - w
    return times, np.sum(dx * dx, axis=2)


def render(request: FigureRequest) -> str:
    """Render one figure to ``request.output`` and return the path."""
    loaded = load_inputs(request.inputs)
    missing = {
        role for role in _KIND_ROLES[request.kind]
        if (role == "trajectory" and not loaded["trajectory"]) or (role != "trajectory" and role not in loaded)
    }
    if missing:
        raise SchemaError(f"{request.kind.value} needs input(s) with role(s): {sorted(missing)}")

    fig, renderer = _RENDERERS[request.kind](loaded, request)
    out = Path(request.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return str(out)


def _render_trajectory_quiver(loaded, request):
    fig, ax = plt.subplots(figsize=(6, 6))
    if "quiver" in loaded:
        header, data, path = loaded["quiver"]
        x, y, wx, wy = _columns(header, data, ("x", "y", "wx", "wy"), path)
        step = max(1, request.quiver_step)
        ax.quiver(x[::step], y[::step], wx[::step], wy[::step],
                  color="0.7", width=0.003, zorder=1)
    for idx, (header, data, path) in enumerate(loaded["trajectory"]):
        times, xy = _trajectory_arrays(header, data, path)
        n = xy.shape[1]
        for i in range(n):
            if idx == 0:
                ax.plot(xy[:, i, 0], xy[:, i, 1], color=f"C{i % 10}", lw=1.6,
                        label="optimized" if i == 0 else None, zorder=3)
                ax.plot(xy[0, i, 0], xy[0, i, 1], "o", color=f"C{i % 10}", ms=5, zorder=4)
                ax.plot(xy[-1, i, 0], xy[-1, i, 1], "s", color=f"C{i % 10}", ms=5, zorder=4)
            else:
                ax.plot(xy[:, i, 0], xy[:, i, 1], "--", color="C1", lw=1.2,
                        label="baseline" if i == 0 else None, zorder=2)
    if request.bounds:
        ax.set_xlim(request.bounds[0], request.bounds[1])
        ax.set_ylim(request.bounds[2], request.bounds[3])
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_aspect("equal")
    ax.legend(loc="best", fontsize=8)
    return fig, None


def _render_effort_curve(loaded, request):
    header, data, path = loaded["trajectory"][0]
    times, effort = compute_effort(header, data, path, loaded.get("flow_samples"))
    fig, ax = plt.subplots(figsize=(6, 4))
    for i in range(effort.shape[1]):
        ax.plot(times, effort[:, i], color=f"C{i % 10}", lw=1.0, alpha=0.7)
    if effort.shape[1] > 1:
        ax.plot(times, effort.sum(axis=1), color="k", lw=1.8, label="total")
        ax.legend(fontsize=8)
    ax.set_xlabel("t")
    ax.set_ylabel("control effort")
    return fig, None


def _render_mc_scatter_hist(loaded, request):
    sh, sd, sp = loaded["scatter"]
    trial, agent, qx, qy = _columns(sh, sd, ("trial", "agent", "qx", "qy"), sp)
    eh, ed, ep = loaded["energies"]
    energies = _columns(eh, ed, ("E_whf",), ep)[0]
    energies = energies[np.isfinite(energies)]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    for i in np.unique(agent.astype(int)):
        mask = agent.astype(int) == i
        ax1.scatter(qx[mask], qy[mask], s=12, color=f"C{i % 10}", alpha=0.8)
    ax1.set_xlabel("qx(0)")
    ax1.set_ylabel("qy(0)")
    ax1.set_title("optimized initial velocities")
    bins = request.style.get("bins", min(20, max(5, len(energies) // 2)))
    counts, _, _ = ax2.hist(energies, bins=bins, color="C0", edgecolor="white")
    ax2.set_xlabel("control energy")
    ax2.set_ylabel("trials")
    ax2.set_title("energy distribution")
    return fig, counts


def _render_savings_curve(loaded, request):
    header, data, path = loaded["sweep"]
    n, sav = _columns(header, data, ("N", "savings"), path)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(n, 100.0 * sav, "o-", color="C0")
    ax.set_xlabel("agents")
    ax.set_ylabel("energy savings (%)")
    return fig, None


_RENDERERS = {
    FigureKind.TRAJECTORY_QUIVER: _render_trajectory_quiver,
    FigureKind.EFFORT_CURVE: _render_effort_curve,
    FigureKind.MC_SCATTER_HIST: _render_mc_scatter_hist,
    FigureKind.SAVINGS_CURVE: _render_savings_curve,
}

__version__ = "0.1.0"

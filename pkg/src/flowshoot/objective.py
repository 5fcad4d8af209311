"""Shooting objective: terminal-density mismatch plus boundary penalty.

The decision variable is the stack of initial control velocities q0 (one
2-vector per agent).  Evaluating the objective integrates the swarm, builds
the terminal kernel density estimate, measures its KL divergence from the
target, and adds a quadratic penalty on excursions beyond a prescribed
radius.  Integration failures never raise past this module: they yield a
large sentinel value with a failure flag so line searches back off instead
of crashing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .density import DensityGrid, GridSpec, kde
from .dynamics import IntegrationError, SwarmState, Trajectory, integrate
from .flowfield import FlowSpec, _value

#: Objective value reported for failed evaluations.
SENTINEL_OBJECTIVE = 1e10

#: Values at or above this are treated as failed probes by callers.
FAILURE_THRESHOLD = 1e9


class GradientError(RuntimeError):
    """Finite-difference gradient could not be computed."""


@dataclass
class ObjectiveContext:
    """Frozen problem data shared by every objective evaluation."""

    flow: FlowSpec
    target: DensityGrid
    initial_positions: np.ndarray
    grid: GridSpec
    sigma: float = 1.0
    lambda_b: float = 10.0
    domain_radius: float = 20.0
    T: float = 1.0
    dt: float = 1e-3

    def __post_init__(self):
        self.initial_positions = np.atleast_2d(np.asarray(self.initial_positions, dtype=float))
        if self.initial_positions.shape[1] != 2 or self.initial_positions.shape[0] < 1:
            raise ValueError("initial_positions must have shape (N, 2) with N >= 1")
        if not np.all(np.isfinite(self.initial_positions)):
            raise ValueError("initial positions must be finite")
        if self.lambda_b < 0.0:
            raise ValueError("lambda_b must be >= 0")
        if self.domain_radius <= 0.0:
            raise ValueError("domain_radius must be > 0")
        if self.sigma <= 0.0:
            raise ValueError("sigma must be > 0")
        if self.target.grid != self.grid:
            raise ValueError("target density grid does not match the context grid")

    @property
    def n_agents(self) -> int:
        return self.initial_positions.shape[0]


@dataclass
class ObjectiveReport:
    """One objective evaluation: value = kl_term + penalty_term unless failed."""

    value: float
    kl_term: float
    penalty_term: float
    trajectory: Trajectory | None
    failed: bool = False


def boundary_penalty(traj: Trajectory, radius: float, weight: float) -> float:
    """Quadratic penalty on the violation max(0, |X| - radius).

    Terminal term plus a trapezoid-rule running integral over the sample
    grid, both scaled by ``weight`` (the running term also by 1/T); zero
    exactly when every agent stays inside the radius at all sample times.
    """
    with np.errstate(over="ignore"):  # extreme excursions saturate to inf
        norms = np.linalg.norm(traj.positions, axis=2)
        viol = np.maximum(norms - radius, 0.0)
        per_time = np.sum(viol * viol, axis=1)
    T = float(traj.times[-1] - traj.times[0])
    terminal = weight * float(per_time[-1])
    running = (weight / T) * float(np.trapezoid(per_time, traj.times))
    return terminal + running


def evaluate(q0: np.ndarray, ctx: ObjectiveContext) -> ObjectiveReport:
    """Integrate from (initial_positions, q0) and score the terminal swarm."""
    q0 = np.asarray(q0, dtype=float).reshape(ctx.n_agents, 2)
    if not np.all(np.isfinite(q0)):
        return ObjectiveReport(SENTINEL_OBJECTIVE, math.nan, math.nan, None, failed=True)
    try:
        traj = integrate(ctx.flow, SwarmState(ctx.initial_positions, q0), T=ctx.T, dt=ctx.dt)
    except IntegrationError:
        return ObjectiveReport(SENTINEL_OBJECTIVE, math.nan, math.nan, None, failed=True)
    rho = kde(traj.positions[-1], ctx.sigma, ctx.grid)
    kl = float(np.sum(rho.values * (np.log(rho.values) - ctx.target.log_values())) * rho.cell_area)
    pen = boundary_penalty(traj, ctx.domain_radius, ctx.lambda_b)
    value = kl + pen
    if not math.isfinite(value):
        return ObjectiveReport(SENTINEL_OBJECTIVE, math.nan, math.nan, None, failed=True)
    return ObjectiveReport(value, kl, pen, traj, failed=False)


def fd_gradient(fun, x0: np.ndarray, mode: str = "forward", rel_step: float = 1e-6):
    """Finite-difference gradient engine over a scalar function of a flat vector.

    ``fun`` returns (value, ok); per-coordinate step h_j = rel_step*(1+|x_j|).
    A failed probe retries with the opposite one-sided difference; if both
    sides fail the coordinate is unrecoverable and GradientError is raised.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    f0, ok0 = fun(x0)
    if not ok0:
        raise GradientError("objective failed at the base point")
    grad = np.empty_like(x0)
    for j in range(x0.size):
        h = rel_step * (1.0 + abs(x0[j]))
        xp = x0.copy()
        xp[j] += h
        fp, okp = fun(xp)
        if mode == "central":
            xm = x0.copy()
            xm[j] -= h
            fm, okm = fun(xm)
            if okp and okm:
                grad[j] = (fp - fm) / (2.0 * h)
                continue
            if okp:
                grad[j] = (fp - f0) / h
                continue
            if okm:
                grad[j] = (f0 - fm) / h
                continue
            raise GradientError(f"both probes failed for coordinate {j}")
        if okp:
            grad[j] = (fp - f0) / h
            continue
        xm = x0.copy()
        xm[j] -= h
        fm, okm = fun(xm)
        if okm:
            grad[j] = (f0 - fm) / h
            continue
        raise GradientError(f"both probes failed for coordinate {j}")
    return grad


def gradient_fd(
    q0: np.ndarray,
    ctx: ObjectiveContext,
    mode: str = "forward",
    base: ObjectiveReport | None = None,
) -> np.ndarray:
    """Finite-difference objective gradient, shape (N, 2).

    Forward differences by default (2N extra evaluations); central mode
    (4N evaluations) is available for verification runs.
    """
    if mode not in ("forward", "central"):
        raise ValueError(f"unknown finite-difference mode '{mode}'")
    q0 = np.asarray(q0, dtype=float).reshape(ctx.n_agents, 2)
    if base is None:
        base = evaluate(q0, ctx)
    if base.failed:
        raise GradientError("objective failed at the base point")
    x0 = q0.ravel()
    state = {"base_served": False}

    def fun(x):
        # the engine's first call re-asks for the base point; serve the cache
        if not state["base_served"] and np.array_equal(x, x0):
            state["base_served"] = True
            return base.value, True
        rep = evaluate(x.reshape(ctx.n_agents, 2), ctx)
        return rep.value, not rep.failed

    return fd_gradient(fun, x0, mode=mode).reshape(ctx.n_agents, 2)


def control_energy(traj: Trajectory, flow: FlowSpec) -> float:
    """Aggregate control effort sum_i int |dX_i/dt - w(t, X_i)|^2 dt.

    dX/dt comes from central differences at interior samples and
    second-order one-sided differences at the endpoints; the time integral
    uses the composite trapezoid rule.  Note the integrand carries no 1/2
    factor, so this is twice the action of the same path.
    """
    X = traj.positions
    if X.shape[0] < 3:
        raise ValueError("control energy needs at least 3 trajectory samples")
    dt = traj.dt
    dX = np.empty_like(X)
    dX[1:-1] = (X[2:] - X[:-2]) / (2.0 * dt)
    dX[0] = (-3.0 * X[0] + 4.0 * X[1] - X[2]) / (2.0 * dt)
    dX[-1] = (3.0 * X[-1] - 4.0 * X[-2] + X[-3]) / (2.0 * dt)
    w = flow.alpha * _value(flow, traj.times[:, None], X)
    effort = np.sum((dX - w) ** 2, axis=(1, 2))
    return float(np.trapezoid(effort, traj.times))


def effort_profile(traj: Trajectory, flow: FlowSpec) -> np.ndarray:
    """Instantaneous effort |dX/dt - w|^2 per agent, shape (K+1, N)."""
    X = traj.positions
    dt = traj.dt
    dX = np.empty_like(X)
    dX[1:-1] = (X[2:] - X[:-2]) / (2.0 * dt)
    dX[0] = (-3.0 * X[0] + 4.0 * X[1] - X[2]) / (2.0 * dt)
    dX[-1] = (3.0 * X[-1] - 4.0 * X[-2] + X[-3]) / (2.0 * dt)
    w = flow.alpha * _value(flow, traj.times[:, None], X)
    return np.sum((dX - w) ** 2, axis=2)


def savings(E_whf: float, E_str: float) -> float:
    """Relative reduction 1 - E_whf/E_str against the straight-line baseline."""
    if not E_str > 0.0:
        raise ValueError("baseline energy must be positive")
    return 1.0 - E_whf / E_str


def make_objective_callables(ctx: ObjectiveContext, mode: str = "forward"):
    """(f, g, last_report) closures over flat q0 vectors for an optimizer.

    The two callables share a one-slot memo so a gradient request at the
    point just evaluated reuses the base integration; ``last_report()``
    returns the most recent ObjectiveReport (for energy/KL bookkeeping).
    """
    memo: dict = {}

    def _report(x: np.ndarray) -> ObjectiveReport:
        key = x.tobytes()
        rep = memo.get(key)
        if rep is None:
            rep = evaluate(x.reshape(ctx.n_agents, 2), ctx)
            memo.clear()
            memo[key] = rep
        return rep

    def f(x: np.ndarray) -> float:
        return _report(x).value

    def g(x: np.ndarray) -> np.ndarray:
        return gradient_fd(x.reshape(ctx.n_agents, 2), ctx, mode=mode, base=_report(x)).ravel()

    def last_report() -> ObjectiveReport | None:
        return next(iter(memo.values()), None)

    return f, g, last_report

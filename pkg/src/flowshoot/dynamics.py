"""Agent dynamics in a background flow and their numerical integration.

Each agent carries a position X and a control velocity q evolving as

    dX/dt = q + w(t, X)
    dq/dt = -(Dw(t, X))^T q

with no coupling between agents.  Trajectories are produced by an adaptive
embedded Dormand-Prince 5(4) integrator whose steps are clamped so that
every uniform grid time t_k = k*dt is hit exactly (an extra integration
stop per sample instead of interpolating a dense output).  This keeps the
sampled states free of interpolation error, makes the step sequence
identical whether agents are integrated jointly or separately, and leaves
the objective a smooth function of the initial velocities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .flowfield import FlowKind, FlowSpec, _value, eval_flow, linear_matrix

# Dormand-Prince 5(4) tableau; the propagating 5th-order weights equal the
# last stage row (FSAL), so an accepted step's k7 is the next step's k1.
_DP_C = (0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0)
_DP_A = (
    (),
    (1.0 / 5.0,),
    (3.0 / 40.0, 9.0 / 40.0),
    (44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0),
    (19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0),
    (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0),
    (35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0),
)
_DP_B = np.array([35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0])
_DP_E = np.array(
    [71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0]
)

_MIN_STEP = 1e-14
_MAX_STEPS = 2_000_000


class IntegrationError(RuntimeError):
    """Integration failed (step-size underflow or non-finite state)."""

    def __init__(self, message: str, t: float):
        super().__init__(f"{message} at t = {t:.6g}")
        self.t = t


@dataclass(frozen=True)
class AgentState:
    """Position and control velocity of one agent."""

    position: np.ndarray
    velocity: np.ndarray


@dataclass
class SwarmState:
    """Positions (N, 2) and control velocities (N, 2) of N agents at time t."""

    positions: np.ndarray
    velocities: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        self.velocities = np.atleast_2d(np.asarray(self.velocities, dtype=float))
        if self.positions.shape != self.velocities.shape or self.positions.shape[1] != 2:
            raise ValueError("positions and velocities must both have shape (N, 2)")
        if self.positions.shape[0] < 1:
            raise ValueError("a swarm needs at least one agent")

    @property
    def n_agents(self) -> int:
        return self.positions.shape[0]

    @property
    def agents(self) -> list[AgentState]:
        return [AgentState(self.positions[i].copy(), self.velocities[i].copy())
                for i in range(self.n_agents)]


@dataclass
class Trajectory:
    """Swarm states sampled on the uniform grid t_k = k*dt, k = 0..K."""

    times: np.ndarray       # (K+1,)
    positions: np.ndarray   # (K+1, N, 2)
    velocities: np.ndarray  # (K+1, N, 2)

    @property
    def n_agents(self) -> int:
        return self.positions.shape[1]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def state_at(self, k: int) -> SwarmState:
        return SwarmState(self.positions[k].copy(), self.velocities[k].copy(), t=float(self.times[k]))

    def to_csv(self, path) -> None:
        """Write rows `t,agent,x,y,qx,qy`, one per (t_k, agent)."""
        with open(path, "w") as fh:
            fh.write("t,agent,x,y,qx,qy\n")
            for k, t in enumerate(self.times):
                for i in range(self.n_agents):
                    x, y = self.positions[k, i]
                    qx, qy = self.velocities[k, i]
                    fh.write(f"{t:.12g},{i},{x:.12g},{y:.12g},{qx:.12g},{qy:.12g}\n")

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        raw = np.genfromtxt(path, delimiter=",", names=True)
        agents = raw["agent"].astype(int)
        n = agents.max() + 1
        rows = len(raw)
        if rows % n:
            raise ValueError("trajectory CSV rows do not factor into (K+1) x N")
        k1 = rows // n
        times = raw["t"].reshape(k1, n)[:, 0]
        positions = np.stack([raw["x"], raw["y"]], axis=-1).reshape(k1, n, 2)
        velocities = np.stack([raw["qx"], raw["qy"]], axis=-1).reshape(k1, n, 2)
        return cls(times=times, positions=positions, velocities=velocities)


def rhs(flow: FlowSpec, t: float, state: SwarmState) -> tuple[np.ndarray, np.ndarray]:
    """Time derivative (dX, dq) of a swarm state; agents are independent."""
    fun = _make_rhs(flow, state.n_agents)
    y = np.concatenate([state.positions.ravel(), state.velocities.ravel()])
    dy = fun(t, y)
    n = state.n_agents
    return dy[: 2 * n].reshape(n, 2).copy(), dy[2 * n:].reshape(n, 2).copy()


def _make_rhs(flow: FlowSpec, n: int):
    """Flat-state derivative closure specialized per flow kind."""
    half = 2 * n

    if flow.kind is FlowKind.ZERO:
        def fun(t, y):
            dy = np.zeros_like(y)
            dy[:half] = y[half:]
            return dy
        return fun

    A = linear_matrix(flow)
    if A is not None:
        aAT = (flow.alpha * A).T       # w = X @ (alpha A)^T
        aA = flow.alpha * A            # dq = -q @ (alpha A)

        def fun(t, y):
            X = y[:half].reshape(n, 2)
            q = y[half:].reshape(n, 2)
            dy = np.empty_like(y)
            dy[:half] = (q + X @ aAT).ravel()
            dy[half:] = (-(q @ aA)).ravel()
            return dy
        return fun

    # gyre: Jacobian has nonzero entries only in its first column
    eps, omg, alpha = flow.epsilon, flow.omega, flow.alpha
    two_pi = 2.0 * math.pi

    def fun(t, y):
        X = y[:half].reshape(n, 2)
        q = y[half:].reshape(n, 2)
        xx = X[:, 0]
        s = math.sin(omg * t)
        a = eps * s
        b = 1.0 - 2.0 * eps * s
        f = (a * xx + b) * xx
        dfdx = 2.0 * a * xx + b
        cos_pf = np.cos(np.pi * f)
        sin_pf = np.sin(np.pi * f)
        w1 = (-two_pi * alpha) * sin_pf
        w2 = (two_pi * alpha) * cos_pf * dfdx
        j11 = (-two_pi * np.pi * alpha) * cos_pf * dfdx
        j21 = (two_pi * alpha) * (-np.pi * sin_pf * dfdx * dfdx + 2.0 * a * cos_pf)
        dy = np.empty_like(y)
        dX = dy[:half].reshape(n, 2)
        dq = dy[half:].reshape(n, 2)
        dX[:, 0] = q[:, 0] + w1
        dX[:, 1] = q[:, 1] + w2
        dq[:, 0] = -(j11 * q[:, 0] + j21 * q[:, 1])
        dq[:, 1] = 0.0
        return dy
    return fun


def integrate(
    flow: FlowSpec,
    initial: SwarmState,
    T: float = 1.0,
    dt: float = 1e-3,
    rtol: float = 1e-9,
    atol: float = 1e-9,
) -> Trajectory:
    """Integrate the swarm over [0, T], sampling exactly at t_k = k*dt.

    Adaptive Dormand-Prince 5(4) stepping with the proposed step clamped to
    land on the next grid time; raises :class:`IntegrationError` on step-size
    underflow (h < 1e-14) or a non-finite state, reporting the offending time.
    """
    if dt <= 0.0 or T <= 0.0:
        raise ValueError("T and dt must be positive")
    K = round(T / dt)
    if K < 1 or abs(K * dt - T) > 1e-12 * max(1.0, abs(T)):
        raise ValueError(f"dt = {dt} does not divide T = {T}")
    if not (np.all(np.isfinite(initial.positions)) and np.all(np.isfinite(initial.velocities))):
        raise ValueError("initial swarm state must be finite")

    n = initial.n_agents
    times = np.linspace(0.0, T, K + 1)
    fun = _make_rhs(flow, n)
    y = np.concatenate([initial.positions.ravel(), initial.velocities.ravel()])
    out = np.empty((K + 1, 4 * n))
    out[0] = y

    stages = np.empty((7, y.size))
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        f_cur = fun(0.0, y)
        if not np.all(np.isfinite(f_cur)):
            raise IntegrationError("non-finite derivative", 0.0)
        t = 0.0
        h = dt
        steps = 0
        for k in range(1, K + 1):
            t_target = times[k]
            while True:
                steps += 1
                if steps > _MAX_STEPS:
                    raise IntegrationError("step budget exhausted", t)
                remaining = t_target - t
                hitting = h >= remaining
                h_use = remaining if hitting else h

                stages[0] = f_cur
                for s_i in range(1, 7):
                    incr = _DP_A[s_i][0] * stages[0]
                    for j in range(1, s_i):
                        incr += _DP_A[s_i][j] * stages[j]
                    stages[s_i] = fun(t + _DP_C[s_i] * h_use, y + h_use * incr)
                y_new = y + h_use * (_DP_B @ stages)
                # FSAL: stage 7 was evaluated at (t + h, y_new)
                err = h_use * (_DP_E @ stages)

                ok = np.all(np.isfinite(y_new))
                if ok:
                    scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
                    enorm = math.sqrt(float(np.mean((err / scale) ** 2)))
                    if not math.isfinite(enorm):
                        ok = False
                if ok and enorm <= 1.0:
                    t = t_target if hitting else t + h_use
                    y = y_new
                    f_cur = stages[6].copy()
                    factor = 5.0 if enorm == 0.0 else min(5.0, max(0.2, 0.9 * enorm ** -0.2))
                    h = h_use * factor
                    if hitting:
                        break
                else:
                    shrink = 0.2 if not ok else max(0.2, 0.9 * enorm ** -0.2)
                    h = h_use * shrink
                if h < _MIN_STEP:
                    raise IntegrationError("step size underflow", t)
            out[k] = y

    return Trajectory(
        times=times,
        positions=out[:, : 2 * n].reshape(K + 1, n, 2),
        velocities=out[:, 2 * n:].reshape(K + 1, n, 2),
    )


def hamiltonian(flow: FlowSpec, t: float, agent: AgentState) -> float:
    """Per-agent energy function H = |q|^2 / 2 + q . w(t, X)."""
    q = np.asarray(agent.velocity, dtype=float)
    x = np.asarray(agent.position, dtype=float)
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(x))):
        raise ValueError("agent state must be finite")
    w = eval_flow(flow, t, x)
    return 0.5 * float(q @ q) + float(q @ w)


def hamiltonian_profile(flow: FlowSpec, traj: Trajectory) -> np.ndarray:
    """H(t_k) for every agent, shape (K+1, N); used for conservation checks."""
    w = flow.alpha * _value(flow, traj.times[:, None], traj.positions)
    q = traj.velocities
    return 0.5 * np.sum(q * q, axis=2) + np.sum(q * w, axis=2)


def straight_line_trajectory(
    x0, x1, T: float = 1.0, dt: float = 1e-3, flow: FlowSpec | None = None
) -> Trajectory:
    """Constant-speed straight segment from x0 to x1 sampled on the grid.

    The velocity channel stores dX/dt - w(t_k, X(t_k)) so the baseline rows
    serialize with the control actually needed to realize the segment; with
    no flow given the raw slope is stored.
    """
    x0 = np.asarray(x0, dtype=float).reshape(2)
    x1 = np.asarray(x1, dtype=float).reshape(2)
    return straight_line_swarm(x0[None, :], x1[None, :], T=T, dt=dt, flow=flow)


def straight_line_swarm(
    starts, ends, T: float = 1.0, dt: float = 1e-3, flow: FlowSpec | None = None
) -> Trajectory:
    """Per-agent straight segments from starts (N, 2) to ends (N, 2)."""
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    ends = np.atleast_2d(np.asarray(ends, dtype=float))
    if starts.shape != ends.shape or starts.shape[1] != 2:
        raise ValueError("starts and ends must both have shape (N, 2)")
    K = round(T / dt)
    if K < 1 or abs(K * dt - T) > 1e-12 * max(1.0, abs(T)):
        raise ValueError(f"dt = {dt} does not divide T = {T}")
    times = np.linspace(0.0, T, K + 1)
    frac = (times / T)[:, None, None]
    positions = starts[None, :, :] + frac * (ends - starts)[None, :, :]
    slope = np.broadcast_to((ends - starts)[None, :, :] / T, positions.shape)
    if flow is None:
        velocities = slope.copy()
    else:
        w = flow.alpha * _value(flow, times[:, None], positions)
        velocities = slope - w
    return Trajectory(times=times, positions=positions, velocities=velocities)

"""Closed-form steering solutions for linear background flows w(x) = A x.

With a linear field the momentum equation decouples, q(t) = exp(-A^T t) q0,
and the terminal position is affine in q0.  Steering from xi to x1 over the
unit horizon therefore reduces to a 2x2 solve against the controllability
Gramian

    C = int_0^1 exp(-A s) exp(-A^T s) ds,

which also yields the minimal control energy in closed form.  These exact
solutions are the primary correctness oracle for the ODE integrator and the
shooting optimizer.

Note: the factored integrand collapses to exp(-(A + A^T) s) only when A is
normal (A A^T = A^T A); the general form above is required for arbitrary
matrices and is evaluated with composite Gauss-Legendre quadrature, which is
exact to machine precision for the matrix norms used here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# 24-point Gauss-Legendre rule mapped to [0, 1]; composite panels keep the
# per-panel exponent scale small so quadrature error stays below 1e-13.
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)
_GL_NODES = 0.5 * (_GL_NODES + 1.0)
_GL_WEIGHTS = 0.5 * _GL_WEIGHTS


def _expm2(M: np.ndarray) -> np.ndarray:
    """Exact 2x2 matrix exponential via the trace-free decomposition.

    Writing M = m*I + P with trace-free P, P^2 = delta*I, so
    exp(M) = exp(m) * (cosh(sqrt(delta)) I + sinhc(sqrt(delta)) P),
    with the trig branch for delta < 0 and a series near delta = 0.
    """
    m = 0.5 * (M[0, 0] + M[1, 1])
    P = M - m * np.eye(2)
    delta = P[0, 1] * P[1, 0] + P[0, 0] * P[0, 0]
    if delta > 1e-6:
        s = math.sqrt(delta)
        c0, c1 = math.cosh(s), math.sinh(s) / s
    elif delta < -1e-6:
        s = math.sqrt(-delta)
        c0, c1 = math.cos(s), math.sin(s) / s
    else:
        # cosh(sqrt(d)) and sinh(sqrt(d))/sqrt(d) as series in d
        c0 = 1.0 + delta * (0.5 + delta * (1.0 / 24.0 + delta / 720.0))
        c1 = 1.0 + delta * (1.0 / 6.0 + delta * (1.0 / 120.0 + delta / 5040.0))
    return math.exp(m) * (c0 * np.eye(2) + c1 * P)


def matrix_exp(M, t: float = 1.0) -> np.ndarray:
    """exp(M t) for a 2x2 matrix, accurate to ~1e-14 relative for ||M t|| <= 10."""
    M = np.asarray(M, dtype=float)
    if M.shape != (2, 2) or not np.all(np.isfinite(M)) or not math.isfinite(t):
        raise ValueError("matrix_exp expects a finite 2x2 matrix and finite t")
    return _expm2(M * t)


def gramian(A) -> np.ndarray:
    """Controllability Gramian C = int_0^1 exp(-A s) exp(-A^T s) ds.

    Symmetric positive-definite for every finite A.  Composite 24-point
    Gauss-Legendre quadrature; the panel count grows with ||A|| so each
    panel sees a bounded exponent.
    """
    A = np.asarray(A, dtype=float)
    if A.shape != (2, 2) or not np.all(np.isfinite(A)):
        raise ValueError("gramian expects a finite 2x2 matrix")
    panels = max(1, math.ceil(0.5 * float(np.linalg.norm(A))))
    C = np.zeros((2, 2))
    width = 1.0 / panels
    for p in range(panels):
        left = p * width
        for node, weight in zip(_GL_NODES, _GL_WEIGHTS):
            s = left + width * node
            E = _expm2(-A * s)
            C += (width * weight) * (E @ E.T)
    return 0.5 * (C + C.T)


def analytic_initial_velocity(A, xi, x1) -> np.ndarray:
    """Initial control velocity steering xi to x1 through the flow w = A x.

    q0 = C^{-1} (exp(-A) x1 - xi); integrating the agent dynamics from
    (xi, q0) lands at x1 at t = 1.
    """
    A = np.asarray(A, dtype=float)
    xi = np.asarray(xi, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    z = _expm2(-A) @ x1 - xi
    return np.linalg.solve(gramian(A), z)


def min_energy_cost(A, xi, x1) -> float:
    """Minimal action (1/2) int |q|^2 dt for steering xi to x1; zero iff exp(A) xi = x1."""
    A = np.asarray(A, dtype=float)
    xi = np.asarray(xi, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    z = _expm2(-A) @ x1 - xi
    return 0.5 * float(z @ np.linalg.solve(gramian(A), z))


@dataclass(frozen=True)
class LinearFlowSolution:
    """Bundle of the closed-form quantities for one (A, xi, x1) instance."""

    A: np.ndarray
    expA_neg: np.ndarray   # exp(-A)
    C: np.ndarray          # Gramian
    q0: np.ndarray         # steering initial velocity
    E_min: float           # minimal action


def solve_linear_shooting(A, xi, x1) -> LinearFlowSolution:
    A = np.asarray(A, dtype=float)
    xi = np.asarray(xi, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    expA_neg = _expm2(-A)
    C = gramian(A)
    z = expA_neg @ x1 - xi
    q0 = np.linalg.solve(C, z)
    return LinearFlowSolution(A=A, expA_neg=expA_neg, C=C, q0=q0, E_min=0.5 * float(z @ q0))


def self_check(seed: int = 0, cases: int = 20, dt: float = 1e-3, norm_bound: float = 2.0):
    """Round-trip verification suite used by the `verify-linear` subcommand.

    Returns a list of (name, passed, detail) tuples.  For each random
    instance the analytic q0 is integrated through the agent dynamics and
    checked against the target, and the sampled action is checked against
    the closed-form minimum.
    """
    from .dynamics import SwarmState, integrate
    from .flowfield import linear_flow

    rng = np.random.default_rng(seed)
    worst_miss = 0.0
    worst_energy_rel = 0.0
    min_eig = math.inf
    worst_inverse = 0.0
    for _ in range(cases):
        A = rng.uniform(-1.0, 1.0, (2, 2))
        norm = float(np.linalg.norm(A))
        if norm > norm_bound:
            A *= norm_bound / norm
        xi = rng.uniform(-10.0, 10.0, 2)
        x1 = rng.uniform(-10.0, 10.0, 2)
        sol = solve_linear_shooting(A, xi, x1)

        eigs = np.linalg.eigvalsh(sol.C)
        min_eig = min(min_eig, float(eigs.min()))
        worst_inverse = max(
            worst_inverse,
            float(np.max(np.abs(matrix_exp(A, 1.0) @ matrix_exp(A, -1.0) - np.eye(2)))),
        )

        traj = integrate(
            linear_flow(A),
            SwarmState(positions=xi[None, :], velocities=sol.q0[None, :], t=0.0),
            T=1.0,
            dt=dt,
        )
        miss = float(np.linalg.norm(traj.positions[-1, 0] - x1))
        worst_miss = max(worst_miss, miss)

        speed2 = np.sum(traj.velocities[:, 0, :] ** 2, axis=1)
        action = 0.5 * float(np.trapezoid(speed2, traj.times))
        if sol.E_min > 1e-12:
            worst_energy_rel = max(worst_energy_rel, abs(action - sol.E_min) / sol.E_min)

    return [
        ("terminal_miss<=1e-6", worst_miss <= 1e-6, f"max |X(1)-x1| = {worst_miss:.3e}"),
        ("action_rel_err<=1e-5", worst_energy_rel <= 1e-5, f"max rel err = {worst_energy_rel:.3e}"),
        ("gramian_spd", min_eig > 0.0, f"min eigenvalue = {min_eig:.3e}"),
        ("expm_inverse<=1e-10", worst_inverse <= 1e-10, f"max |e^A e^-A - I| = {worst_inverse:.3e}"),
    ]

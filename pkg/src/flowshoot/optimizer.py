"""Quasi-Newton minimization of the shooting objective.

Limited-memory BFGS with the two-loop recursion and a strong-Wolfe line
search, plus two study drivers built on top of it: flow-strength homotopy
continuation (warm-starting each stage from the previous optimum) and
seeded Monte-Carlo multi-start trials.
"""

from __future__ import annotations

import math
import time
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .objective import (
    FAILURE_THRESHOLD,
    GradientError,
    ObjectiveContext,
    control_energy,
    evaluate,
    make_objective_callables,
)

_LINE_SEARCH_BUDGET = 40


@dataclass(frozen=True)
class OptimizerOptions:
    """Termination thresholds and line-search constants."""

    memory: int = 10
    grad_tol: float = 1e-6
    f_rel_tol: float = 1e-10
    max_iter: int = 300
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    fd_mode: str = "forward"

    def __post_init__(self):
        if not 0.0 < self.wolfe_c1 < self.wolfe_c2 < 1.0:
            raise ValueError("Wolfe constants must satisfy 0 < c1 < c2 < 1")
        if self.memory < 1:
            raise ValueError("memory must be >= 1")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.fd_mode not in ("forward", "central"):
            raise ValueError("fd_mode must be 'forward' or 'central'")


@dataclass
class StageRecord:
    """Summary of one homotopy stage."""

    alpha: float
    q0_opt: np.ndarray
    final_objective: float
    iterations: int
    converged: bool
    E_whf: float


@dataclass
class OptimResult:
    q0_opt: np.ndarray
    objective_history: list[float]
    grad_norm_final: float
    iterations: int
    converged: bool
    wall_time: float
    message: str = ""
    stages: list[StageRecord] = field(default_factory=list)


@dataclass
class TrialRecord:
    """One Monte-Carlo trial; fully reproducible from its seed."""

    seed: int
    q0_init: np.ndarray
    q0_opt: np.ndarray
    E_whf: float
    final_objective: float
    iterations: int
    converged: bool = False
    error: str | None = None


def _bad(value: float) -> bool:
    return not math.isfinite(value) or value >= FAILURE_THRESHOLD


def _two_loop(grad, pairs):
    """L-BFGS search direction from the stored curvature pairs."""
    q = grad.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    if pairs:
        s, y, _ = pairs[-1]
        q *= float(s @ y) / float(y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return -q


def _line_search(f, g, x, d, f0, g0, c1, c2):
    """Strong-Wolfe line search (bracket + zoom), initial step 1.

    Returns (alpha, f_new, g_new) or None after the shared evaluation
    budget is exhausted.  Sentinel or non-finite trial values are treated
    as sufficient-decrease violations so the search retreats from blow-up
    regions without requesting gradients there.
    """
    dphi0 = float(g0 @ d)
    if dphi0 >= 0.0:
        return None
    budget = [_LINE_SEARCH_BUDGET]

    def phi(a):
        budget[0] -= 1
        return f(x + a * d)

    def dphi(a):
        ga = g(x + a * d)
        return float(ga @ d), ga

    def zoom(a_lo, f_lo, d_lo, a_hi, f_hi):
        while budget[0] > 0:
            # quadratic model through (a_lo, f_lo, d_lo) and (a_hi, f_hi)
            da = a_hi - a_lo
            denom = 2.0 * (f_hi - f_lo - d_lo * da)
            a_j = a_lo - d_lo * da * da / denom if denom != 0.0 and math.isfinite(denom) else math.nan
            low, high = min(a_lo, a_hi), max(a_lo, a_hi)
            margin = 0.1 * (high - low)
            if not (math.isfinite(a_j) and low + margin < a_j < high - margin):
                a_j = 0.5 * (a_lo + a_hi)
            f_j = phi(a_j)
            if _bad(f_j) or f_j > f0 + c1 * a_j * dphi0 or f_j >= f_lo:
                a_hi, f_hi = a_j, f_j
            else:
                d_j, g_j = dphi(a_j)
                if abs(d_j) <= -c2 * dphi0:
                    return a_j, f_j, g_j
                if d_j * (a_hi - a_lo) >= 0.0:
                    a_hi, f_hi = a_lo, f_lo
                a_lo, f_lo, d_lo = a_j, f_j, d_j
            if abs(a_hi - a_lo) <= 1e-14 * max(1.0, abs(a_lo)):
                return None
        return None

    a_prev, f_prev, d_prev = 0.0, f0, dphi0
    alpha = 1.0
    first = True
    while budget[0] > 0:
        fa = phi(alpha)
        if _bad(fa) or fa > f0 + c1 * alpha * dphi0 or (not first and fa >= f_prev):
            return zoom(a_prev, f_prev, d_prev, alpha, fa)
        da, ga = dphi(alpha)
        if abs(da) <= -c2 * dphi0:
            return alpha, fa, ga
        if da >= 0.0:
            return zoom(alpha, fa, da, a_prev, f_prev)
        a_prev, f_prev, d_prev = alpha, fa, da
        alpha *= 2.0
        first = False
    return None


def lbfgs_minimize(f, g, x0: np.ndarray, opts: OptimizerOptions | None = None) -> OptimResult:
    """Minimize f over flat or (N, 2)-shaped x with limited-memory BFGS.

    Terminates when the gradient infinity norm drops below ``grad_tol``,
    when the relative objective change stays below ``f_rel_tol`` for three
    consecutive iterations, or at ``max_iter``.  Curvature pairs with
    s.y <= 1e-10 |s||y| are skipped.  A failed line search returns the best
    iterate with ``converged = False``; accepted steps satisfy the Armijo
    condition, so the objective history is non-increasing.
    """
    opts = opts or OptimizerOptions()
    shape = np.asarray(x0, dtype=float).shape
    x = np.asarray(x0, dtype=float).ravel().copy()
    start = time.perf_counter()

    fx = f(x)
    if not math.isfinite(fx):
        raise ValueError("objective is not finite at the initial point")
    try:
        gx = np.asarray(g(x), dtype=float).ravel()
    except GradientError as exc:
        return OptimResult(x.reshape(shape), [fx], math.inf, 0, False,
                           time.perf_counter() - start, message=f"gradient failed: {exc}")

    history = [fx]
    pairs: deque = deque(maxlen=opts.memory)
    stagnant = 0
    converged = False
    message = "max_iter reached"
    iterations = 0

    for _ in range(opts.max_iter):
        gnorm = float(np.max(np.abs(gx)))
        if gnorm <= opts.grad_tol:
            converged = True
            message = "gradient tolerance reached"
            break
        d = _two_loop(gx, pairs)
        if float(d @ gx) >= 0.0:
            d = -gx
        try:
            hit = _line_search(f, g, x, d, fx, gx, opts.wolfe_c1, opts.wolfe_c2)
        except GradientError as exc:
            message = f"gradient failed: {exc}"
            hit = None
        if hit is None:
            if message == "max_iter reached":
                message = "line search failed"
            break
        alpha, f_new, g_new = hit
        g_new = np.asarray(g_new, dtype=float).ravel()
        s = alpha * d
        y = g_new - gx
        sy = float(s @ y)
        if sy > 1e-10 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            pairs.append((s, y, 1.0 / sy))
        x = x + s
        rel_change = abs(fx - f_new) / max(1.0, abs(fx))
        fx, gx = f_new, g_new
        history.append(fx)
        iterations += 1
        if rel_change <= opts.f_rel_tol:
            stagnant += 1
            if stagnant >= 3:
                converged = True
                message = "objective stagnated"
                break
        else:
            stagnant = 0

    return OptimResult(
        q0_opt=x.reshape(shape),
        objective_history=history,
        grad_norm_final=float(np.max(np.abs(gx))),
        iterations=iterations,
        converged=converged,
        wall_time=time.perf_counter() - start,
        message=message,
    )


def homotopy_solve(
    ctx: ObjectiveContext,
    alphas,
    q0_init: np.ndarray | None = None,
    opts: OptimizerOptions | None = None,
) -> OptimResult:
    """Continuation over flow strength: solve with w scaled by each alpha in
    turn, warm-starting every stage from the previous optimum.

    ``alphas`` must be ascending and end at 1 so the final stage solves the
    original problem.  A stage whose warm start evaluates non-finite falls
    back to zero initialization for that stage.  Returns the final stage's
    result with the per-stage history attached.
    """
    alphas = [float(a) for a in alphas]
    if not alphas:
        raise ValueError("homotopy schedule must be non-empty")
    if any(b <= a for a, b in zip(alphas, alphas[1:])):
        raise ValueError("homotopy schedule must be strictly ascending")
    if not 0.0 < alphas[0] <= 1.0 or abs(alphas[-1] - 1.0) > 1e-12:
        raise ValueError("homotopy schedule must lie in (0, 1] and end at 1")
    opts = opts or OptimizerOptions()

    n = ctx.n_agents
    warm = np.zeros((n, 2)) if q0_init is None else np.asarray(q0_init, dtype=float).reshape(n, 2)
    stages: list[StageRecord] = []
    result: OptimResult | None = None
    for a in alphas:
        stage_ctx = replace(ctx, flow=replace(ctx.flow, alpha=a))
        probe = evaluate(warm, stage_ctx)
        if probe.failed:
            warm = np.zeros((n, 2))
        f, g, _ = make_objective_callables(stage_ctx, mode=opts.fd_mode)
        result = lbfgs_minimize(f, g, warm, opts)
        final = evaluate(result.q0_opt, stage_ctx)
        energy = control_energy(final.trajectory, stage_ctx.flow) if not final.failed else math.nan
        stages.append(
            StageRecord(
                alpha=a,
                q0_opt=result.q0_opt.copy(),
                final_objective=result.objective_history[-1],
                iterations=result.iterations,
                converged=result.converged,
                E_whf=energy,
            )
        )
        warm = result.q0_opt
    result.stages = stages
    return result


def monte_carlo_study(
    ctx: ObjectiveContext,
    trials: int,
    base_seed: int = 0,
    opts: OptimizerOptions | None = None,
) -> list[TrialRecord]:
    """Multi-start study: trial k draws q0 ~ U(-1, 1)^{N x 2} with seed
    base_seed + k, optimizes, and records the outcome.

    Individual trial failures are recorded in their TrialRecord and never
    abort the study; records are ordered by trial index and deterministic
    for a fixed base seed.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    opts = opts or OptimizerOptions()
    records: list[TrialRecord] = []
    for k in range(trials):
        seed = base_seed + k
        rng = np.random.default_rng(seed)
        q0_init = rng.uniform(-1.0, 1.0, (ctx.n_agents, 2))
        try:
            f, g, _ = make_objective_callables(ctx, mode=opts.fd_mode)
            result = lbfgs_minimize(f, g, q0_init, opts)
            final = evaluate(result.q0_opt, ctx)
            energy = control_energy(final.trajectory, ctx.flow) if not final.failed else math.nan
            records.append(
                TrialRecord(
                    seed=seed,
                    q0_init=q0_init,
                    q0_opt=result.q0_opt,
                    E_whf=energy,
                    final_objective=result.objective_history[-1],
                    iterations=result.iterations,
                    converged=result.converged,
                )
            )
        except Exception as exc:  # record, never abort the study
            records.append(
                TrialRecord(
                    seed=seed,
                    q0_init=q0_init,
                    q0_opt=np.full((ctx.n_agents, 2), math.nan),
                    E_whf=math.nan,
                    final_objective=math.nan,
                    iterations=0,
                    converged=False,
                    error=str(exc),
                )
            )
    return records

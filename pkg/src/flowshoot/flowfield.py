"""Analytic background flow fields for planar transport problems.

The catalog covers five steady linear fields (circle, attractor, repeller,
vertical, stagnation), a time-dependent gyre, user-supplied linear fields,
and the zero field.  Every member provides the velocity ``w(t, x)``, the
spatial Jacobian ``Dw(t, x)`` and the time derivative ``dw/dt(t, x)`` in
closed form; the gyre derivatives are analytic too (finite differences
appear only in the test suite as oracles, since the momentum equation is
integrated thousands of times per optimization).

A :class:`FlowSpec` is immutable and carries a homotopy multiplier
``alpha`` in [0, 1] that scales all three quantities uniformly, so
continuation schedules can share one field definition without mutating it.
All evaluation functions accept batched points: ``x`` may have any shape
``(..., 2)`` and ``t`` may be a scalar or an array broadcastable against
``x[..., 0]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

TWO_PI = 2.0 * math.pi


class FlowKind(str, Enum):
    """Names of the supported background flows."""

    CIRCLE = "circle"
    ATTRACTOR = "attractor"
    REPELLER = "repeller"
    VERTICAL = "vertical"
    STAGNATION = "stagnation"
    GYRE = "gyre"
    LINEAR = "linear"
    ZERO = "zero"


# Steady catalog members are linear fields w(x) = A x with these matrices.
_STEADY_MATRICES: dict[FlowKind, tuple] = {
    FlowKind.CIRCLE: ((0.0, -1.0), (1.0, 0.0)),
    FlowKind.ATTRACTOR: ((-1.0, 2.0), (-1.0, -1.0)),
    FlowKind.REPELLER: ((1.0, 1.0), (-1.0, 1.0)),
    FlowKind.VERTICAL: ((0.0, 0.0), (0.0, 5.0)),
    FlowKind.STAGNATION: ((1.0, -2.0), (-1.0, -1.0)),
}

STEADY_KINDS = tuple(_STEADY_MATRICES)
CATALOG_KINDS = STEADY_KINDS + (FlowKind.GYRE,)


@dataclass(frozen=True)
class FlowSpec:
    """Immutable description of one background flow.

    ``alpha`` scales the field: evaluating with ``alpha`` yields exactly
    ``alpha`` times the ``alpha = 1`` value at every (t, x).  Parameters
    live on the spec, never in module state, so concurrent sweeps and
    continuation stages can coexist.
    """

    kind: FlowKind
    alpha: float = 1.0
    epsilon: float = 0.1         # gyre modulation strength
    omega: float = TWO_PI        # gyre angular frequency
    matrix: tuple | None = None  # 2x2 rows, LINEAR kind only

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and 0.0 <= self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.kind is FlowKind.LINEAR:
            m = np.asarray(self.matrix, dtype=float)
            if m.shape != (2, 2) or not np.all(np.isfinite(m)):
                raise ValueError("linear flow requires a finite 2x2 matrix")
            object.__setattr__(self, "matrix", tuple(map(tuple, m.tolist())))
        elif self.matrix is not None:
            raise ValueError(f"matrix only applies to linear flows, not '{self.kind.value}'")
        if self.kind is FlowKind.GYRE:
            if not (math.isfinite(self.epsilon) and math.isfinite(self.omega)):
                raise ValueError("gyre parameters must be finite")


def circle_flow(alpha: float = 1.0) -> FlowSpec:
    """Rotational field w(x, y) = (-y, x)."""
    return FlowSpec(FlowKind.CIRCLE, alpha=alpha)


def attractor_flow(alpha: float = 1.0) -> FlowSpec:
    """Spiral sink w(x, y) = (-x + 2y, -y - x)."""
    return FlowSpec(FlowKind.ATTRACTOR, alpha=alpha)


def repeller_flow(alpha: float = 1.0) -> FlowSpec:
    """Spiral source w(x, y) = (x + y, -x + y)."""
    return FlowSpec(FlowKind.REPELLER, alpha=alpha)


def vertical_flow(alpha: float = 1.0) -> FlowSpec:
    """Shear field w(x, y) = (0, 5y)."""
    return FlowSpec(FlowKind.VERTICAL, alpha=alpha)


def stagnation_flow(alpha: float = 1.0) -> FlowSpec:
    """Stagnation-point field w(x, y) = (x - 2y, -x - y)."""
    return FlowSpec(FlowKind.STAGNATION, alpha=alpha)


def gyre_flow(epsilon: float = 0.1, omega: float = TWO_PI, alpha: float = 1.0) -> FlowSpec:
    """Time-dependent gyre.

    w(t, x, y) = (-2*pi*sin(pi*f), 2*pi*cos(pi*f) * df/dx) with
    f(t, x) = a(t) x^2 + b(t) x, a(t) = eps*sin(omega*t) and
    b(t) = 1 - 2*eps*sin(omega*t).  The trig arguments carry no
    y-dependence, so the Jacobian's second column vanishes.
    """
    return FlowSpec(FlowKind.GYRE, alpha=alpha, epsilon=epsilon, omega=omega)


def linear_flow(matrix, alpha: float = 1.0) -> FlowSpec:
    """General linear field w(x) = A x for a constant 2x2 matrix A."""
    m = np.asarray(matrix, dtype=float)
    return FlowSpec(FlowKind.LINEAR, alpha=alpha, matrix=tuple(map(tuple, m.tolist())))


def zero_flow() -> FlowSpec:
    """The zero field (classical transport with no current)."""
    return FlowSpec(FlowKind.ZERO)


def linear_matrix(flow: FlowSpec) -> np.ndarray | None:
    """Unscaled matrix A when the flow is linear (steady catalog or LINEAR kind)."""
    if flow.kind is FlowKind.LINEAR:
        return np.asarray(flow.matrix, dtype=float)
    rows = _STEADY_MATRICES.get(flow.kind)
    if rows is not None:
        return np.asarray(rows, dtype=float)
    return None


def is_steady(flow: FlowSpec) -> bool:
    return flow.kind is not FlowKind.GYRE


def _validate(t, x):
    t_arr = np.asarray(t, dtype=float)
    pts = np.asarray(x, dtype=float)
    if pts.shape[-1] != 2:
        raise ValueError(f"points must have trailing dimension 2, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("non-finite point passed to flow evaluation")
    if not np.all(np.isfinite(t_arr)):
        raise ValueError("non-finite time passed to flow evaluation")
    return t_arr, pts


def _gyre_shape(flow: FlowSpec, t, xx):
    """Return (a, b, f, dfdx) for the gyre at times t and x-coordinates xx."""
    s = np.sin(flow.omega * t)
    a = flow.epsilon * s
    b = 1.0 - 2.0 * flow.epsilon * s
    f = (a * xx + b) * xx
    dfdx = 2.0 * a * xx + b
    return a, b, f, dfdx


def eval_flow(flow: FlowSpec, t, x) -> np.ndarray:
    """Velocity alpha * w(t, x); steady flows ignore t."""
    t_arr, pts = _validate(t, x)
    return flow.alpha * _value(flow, t_arr, pts)


def _value(flow: FlowSpec, t, pts):
    if flow.kind is FlowKind.ZERO:
        return np.zeros_like(pts)
    A = linear_matrix(flow)
    if A is not None:
        return pts @ A.T
    # gyre
    xx = pts[..., 0]
    _, _, f, dfdx = _gyre_shape(flow, t, xx)
    w = np.empty(np.broadcast(f, xx).shape + (2,))
    w[..., 0] = -TWO_PI * np.sin(np.pi * f)
    w[..., 1] = TWO_PI * np.cos(np.pi * f) * dfdx
    return w


def eval_jacobian(flow: FlowSpec, t, x) -> np.ndarray:
    """Spatial Jacobian alpha * Dw(t, x) with entries d(w_i)/d(x_j), shape (..., 2, 2)."""
    t_arr, pts = _validate(t, x)
    return flow.alpha * _jacobian(flow, t_arr, pts)


def _jacobian(flow: FlowSpec, t, pts):
    base_shape = pts.shape[:-1]
    if flow.kind is FlowKind.ZERO:
        return np.zeros(base_shape + (2, 2))
    A = linear_matrix(flow)
    if A is not None:
        out = np.empty(base_shape + (2, 2))
        out[...] = A
        return out
    xx = pts[..., 0]
    a, _, f, dfdx = _gyre_shape(flow, t, xx)
    cos_pf = np.cos(np.pi * f)
    sin_pf = np.sin(np.pi * f)
    out = np.zeros(np.broadcast(f, xx).shape + (2, 2))
    out[..., 0, 0] = -TWO_PI * np.pi * cos_pf * dfdx
    out[..., 1, 0] = TWO_PI * (-np.pi * sin_pf * dfdx * dfdx + 2.0 * a * cos_pf)
    return out


def eval_time_derivative(flow: FlowSpec, t, x) -> np.ndarray:
    """Partial derivative alpha * dw/dt(t, x); identically zero for steady flows."""
    t_arr, pts = _validate(t, x)
    if flow.kind is not FlowKind.GYRE:
        return np.zeros_like(pts)
    xx = pts[..., 0]
    a, _, f, dfdx = _gyre_shape(flow, t_arr, xx)
    c = np.cos(flow.omega * t_arr)
    da = flow.epsilon * flow.omega * c
    db = -2.0 * flow.epsilon * flow.omega * c
    ft = (da * xx + db) * xx
    dfdx_t = 2.0 * da * xx + db
    cos_pf = np.cos(np.pi * f)
    sin_pf = np.sin(np.pi * f)
    out = np.empty(np.broadcast(f, xx).shape + (2,))
    out[..., 0] = -TWO_PI * np.pi * cos_pf * ft
    out[..., 1] = TWO_PI * (-np.pi * sin_pf * ft * dfdx + cos_pf * dfdx_t)
    return flow.alpha * out


def flow_from_name(name: str, **params) -> FlowSpec:
    """Build a FlowSpec from its catalog name and keyword parameters."""
    try:
        kind = FlowKind(name.lower())
    except ValueError:
        valid = ", ".join(k.value for k in FlowKind)
        raise ValueError(f"unknown flow '{name}'; valid kinds: {valid}") from None
    if kind is FlowKind.LINEAR:
        if "matrix" not in params:
            raise ValueError("linear flow requires a 'matrix' parameter")
        return linear_flow(params.pop("matrix"), **params)
    return FlowSpec(kind, **params)

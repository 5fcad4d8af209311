"""Grid densities: targets, kernel density estimates, and KL divergence.

All densities live on a uniform square grid and share one finalization
pipeline: values are floored at a small epsilon, renormalized to unit mass
under midpoint quadrature, and floored once more so both invariants (mass
within 1e-9 of one, every cell >= epsilon) hold simultaneously.  Flooring
keeps the KL divergence finite where a target's tails underflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

#: Density floor applied before and after renormalization.
DENSITY_FLOOR = 1e-12


class GridMismatchError(ValueError):
    """Two grid densities with different grids were combined."""


@dataclass(frozen=True)
class GridSpec:
    """Uniform n x n cell grid over [xmin, xmax] x [ymin, ymax]."""

    xmin: float = -20.0
    xmax: float = 20.0
    ymin: float = -20.0
    ymax: float = 20.0
    resolution: int = 500

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValueError("grid bounds must satisfy xmax > xmin and ymax > ymin")
        if self.resolution < 16:
            raise ValueError("grid resolution must be at least 16")

    @property
    def dx(self) -> float:
        return (self.xmax - self.xmin) / self.resolution

    @property
    def dy(self) -> float:
        return (self.ymax - self.ymin) / self.resolution

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    def x_centers(self) -> np.ndarray:
        return self.xmin + (np.arange(self.resolution) + 0.5) * self.dx

    def y_centers(self) -> np.ndarray:
        return self.ymin + (np.arange(self.resolution) + 0.5) * self.dy


@dataclass
class DensityGrid:
    """Normalized nonnegative density sampled at cell centers.

    ``values[iy, ix]`` corresponds to (x_centers[ix], y_centers[iy]).
    """

    grid: GridSpec
    values: np.ndarray
    cell_area: float
    _log: np.ndarray | None = field(default=None, repr=False, compare=False)

    def log_values(self) -> np.ndarray:
        if self._log is None:
            self._log = np.log(self.values)
        return self._log

    def mass(self) -> float:
        return float(self.values.sum() * self.cell_area)

    def to_csv(self, path) -> None:
        """Header line with bounds/resolution, then the row-major value matrix."""
        g = self.grid
        with open(path, "w") as fh:
            fh.write("xmin,xmax,ymin,ymax,resolution\n")
            fh.write(f"{g.xmin:.12g},{g.xmax:.12g},{g.ymin:.12g},{g.ymax:.12g},{g.resolution}\n")
            np.savetxt(fh, self.values, delimiter=",", fmt="%.9g")

    @classmethod
    def from_csv(cls, path) -> "DensityGrid":
        with open(path) as fh:
            fh.readline()
            xmin, xmax, ymin, ymax, res = fh.readline().strip().split(",")
            values = np.loadtxt(fh, delimiter=",")
        grid = GridSpec(float(xmin), float(xmax), float(ymin), float(ymax), int(res))
        return cls(grid=grid, values=values, cell_area=grid.cell_area)


class TargetKind(str, Enum):
    POINT_GAUSSIAN = "point_gaussian"
    RING = "ring"
    HEART = "heart"


@dataclass(frozen=True)
class TargetSpec:
    """Parametric target density.

    point_gaussian: isotropic Gaussian at ``center`` with width ``s``.
    ring: annulus of mean radius ``r0`` and width ``s`` around ``center``.
    heart: exp(-phi/(2 s^2)) for the heart-shaped potential
        phi = Xl^2 + (1.25 Yl - sqrt(|Xl|))^2 in the coordinates
        Xl = l (x - cx), Yl = l (y - cy); ``l`` sets the spatial extent.
    """

    kind: TargetKind
    center: tuple = (0.0, 0.0)
    s: float = 1.0
    r0: float = 8.0
    l: float = 0.15

    def __post_init__(self):
        if self.s <= 0.0:
            raise ValueError("target width s must be > 0")
        if self.kind is TargetKind.RING and self.r0 <= 0.0:
            raise ValueError("ring radius r0 must be > 0")
        if self.kind is TargetKind.HEART and self.l <= 0.0:
            raise ValueError("heart scale l must be > 0")
        c = np.asarray(self.center, dtype=float)
        if c.shape != (2,) or not np.all(np.isfinite(c)):
            raise ValueError("target center must be a finite 2-vector")
        object.__setattr__(self, "center", (float(c[0]), float(c[1])))


class InitialKind(str, Enum):
    POINT = "point"
    CIRCLE_FORMATION = "circle_formation"
    GAUSSIAN_CLOUD = "gaussian_cloud"


@dataclass(frozen=True)
class InitialSpec:
    """Initial-position sampler: a fixed point, a circular formation of the
    given radius, or a seeded isotropic Gaussian cloud."""

    kind: InitialKind
    x0: tuple = (0.0, 0.0)
    radius: float = 1.0
    center: tuple = (0.0, 0.0)
    spread: float = 1.0

    def __post_init__(self):
        if self.radius <= 0.0:
            raise ValueError("formation radius must be > 0")
        if self.spread <= 0.0:
            raise ValueError("cloud spread must be > 0")
        for name in ("x0", "center"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (2,) or not np.all(np.isfinite(v)):
                raise ValueError(f"initial {name} must be a finite 2-vector")
            object.__setattr__(self, name, (float(v[0]), float(v[1])))


def _finalize(raw: np.ndarray, cell_area: float) -> np.ndarray:
    """Floor -> renormalize -> floor, giving unit mass and values >= floor."""
    v = np.maximum(raw, DENSITY_FLOOR)
    v /= v.sum() * cell_area
    np.maximum(v, DENSITY_FLOOR, out=v)
    return v


def target_density(spec: TargetSpec, grid: GridSpec) -> DensityGrid:
    """Evaluate the target formula at cell centers, floor, and normalize."""
    X, Y = np.meshgrid(grid.x_centers(), grid.y_centers())
    cx, cy = spec.center
    if spec.kind is TargetKind.POINT_GAUSSIAN:
        raw = np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2.0 * spec.s ** 2))
    elif spec.kind is TargetKind.RING:
        R = np.hypot(X - cx, Y - cy)
        raw = np.exp(-((R - spec.r0) ** 2) / (2.0 * spec.s ** 2))
    else:
        Xl = spec.l * (X - cx)
        Yl = spec.l * (Y - cy)
        phi = Xl ** 2 + (1.25 * Yl - np.sqrt(np.abs(Xl))) ** 2
        raw = np.exp(-phi / (2.0 * spec.s ** 2))
    if raw.max() <= DENSITY_FLOOR:
        raise ValueError(
            f"target '{spec.kind.value}' has no mass above the floor on this grid "
            "(degenerate width or off-grid center)"
        )
    return DensityGrid(grid=grid, values=_finalize(raw, grid.cell_area), cell_area=grid.cell_area)


def kde_raw(positions: np.ndarray, sigma: float, grid: GridSpec) -> np.ndarray:
    """Gaussian-kernel mixture (1/N) sum_i K_sigma(x - X_i) at cell centers.

    The isotropic kernel separates per axis, so the grid fill is two small
    exponential tables and one matrix product.  Agents are summed in
    lexicographic position order, which makes the estimate exactly
    independent of agent ordering.
    """
    pts = np.atleast_2d(np.asarray(positions, dtype=float))
    if pts.shape[1] != 2 or pts.shape[0] < 1:
        raise ValueError("positions must have shape (N, 2) with N >= 1")
    if not sigma > 0.0:
        raise ValueError("kde bandwidth sigma must be > 0")
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]
    inv2s2 = 1.0 / (2.0 * sigma * sigma)
    with np.errstate(over="ignore"):  # far-outside agents underflow to zero mass
        gx = np.exp(-inv2s2 * (grid.x_centers()[None, :] - pts[:, 0, None]) ** 2)
        gy = np.exp(-inv2s2 * (grid.y_centers()[None, :] - pts[:, 1, None]) ** 2)
    return (gy.T @ gx) / (2.0 * math.pi * sigma * sigma * pts.shape[0])


def kde(positions: np.ndarray, sigma: float, grid: GridSpec) -> DensityGrid:
    """Kernel density estimate of the agent positions, floored and renormalized.

    Renormalizing on the truncated grid keeps comparisons consistent when
    agents sit near (or beyond) the domain boundary; far-outside agents
    contribute only near-floor mass.
    """
    raw = kde_raw(positions, sigma, grid)
    return DensityGrid(grid=grid, values=_finalize(raw, grid.cell_area), cell_area=grid.cell_area)


def kl_divergence(p: DensityGrid, q: DensityGrid) -> float:
    """Midpoint-quadrature KL divergence sum p log(p/q) * cell_area.

    Both inputs must share one grid and be normalized; shared flooring keeps
    the value finite and bounded below by roughly -1e-12.
    """
    if p.grid != q.grid:
        raise GridMismatchError("KL divergence needs both densities on the same grid")
    return float(np.sum(p.values * (np.log(p.values) - q.log_values())) * p.cell_area)


def sample_initial(spec: InitialSpec, n_agents: int, seed: int = 0) -> np.ndarray:
    """Initial positions (N, 2) for the given sampler spec.

    Random draws use numpy's seeded PCG64 generator, so equal seeds give
    bit-identical samples on any platform.
    """
    if n_agents < 1:
        raise ValueError("n_agents must be >= 1")
    if spec.kind is InitialKind.POINT:
        return np.tile(np.asarray(spec.x0, dtype=float), (n_agents, 1))
    if spec.kind is InitialKind.CIRCLE_FORMATION:
        theta = 2.0 * np.pi * np.arange(n_agents) / n_agents
        return spec.radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    rng = np.random.default_rng(seed)
    return np.asarray(spec.center, dtype=float) + spec.spread * rng.standard_normal((n_agents, 2))

"""Evaluation grid on [0, 1]^d, boundary-normalised kernels and quadrature.

Every integral in the estimator (over x, x_{-j} or x_{-(j,l)}) is the
trapezoid rule on one uniform grid, so statistics, solver and constraint
all use the same linear operator.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class BandwidthError(ValueError):
    pass


@dataclass(frozen=True)
class Kernel:
    """Symmetric kernel density supported on [-1, 1]."""

    name: str
    mu2: float
    roughness: float

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if self.name == "epanechnikov":
            return np.where(np.abs(u) < 1.0, 0.75 * (1.0 - u * u), 0.0)
        if self.name == "biweight":
            return np.where(np.abs(u) < 1.0, 0.9375 * (1.0 - u * u) ** 2, 0.0)
        raise ValueError(self.name)

    @property
    def constant(self) -> float:
        """C(K) = {R(K) / mu2(K)^2}^{1/5}, the plug-in bandwidth constant."""
        return (self.roughness / self.mu2**2) ** 0.2


KERNELS = {
    "epanechnikov": Kernel("epanechnikov", mu2=0.2, roughness=0.6),
    "biweight": Kernel("biweight", mu2=1.0 / 7.0, roughness=5.0 / 7.0),
}


def get_kernel(name: str | Kernel) -> Kernel:
    if isinstance(name, Kernel):
        return name
    try:
        return KERNELS[name]
    except KeyError:
        raise ValueError(f"unknown kernel {name!r}; choose from {sorted(KERNELS)}") from None


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid with ``points`` nodes per axis on [0, 1], ``d`` axes."""

    points: int = 41
    d: int = 1
    nodes: np.ndarray = field(init=False, repr=False, compare=False)
    weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.points < 2:
            raise ValueError("grid needs at least two nodes per axis")
        if self.d < 1:
            raise ValueError("d must be positive")
        x = np.linspace(0.0, 1.0, self.points)
        q = np.full(self.points, 1.0 / (self.points - 1))
        q[[0, -1]] *= 0.5
        object.__setattr__(self, "nodes", x)
        object.__setattr__(self, "weights", q)

    @property
    def spacing(self) -> float:
        return 1.0 / (self.points - 1)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points,) * self.d

    @property
    def min_bandwidth(self) -> float:
        # support always covers at least three nodes
        return 1.5 * self.spacing


def kernel_weights(grid: GridSpec, X, h: float, kernel: Kernel | str = "epanechnikov"):
    """Boundary-normalised kernel weights of observation(s) ``X`` on the grid.

    Returns an array of shape ``(len(X), M)`` (or ``(M,)`` for scalar X)
    whose trapezoid integral over [0, 1] is one for every row.
    """
    kernel = get_kernel(kernel)
    h = float(h)
    if not h > 0:
        raise BandwidthError(f"bandwidth must be positive, got {h}")
    X_arr = np.atleast_1d(np.asarray(X, dtype=float))
    raw = kernel((X_arr[:, None] - grid.nodes[None, :]) / h) / h
    mass = raw @ grid.weights
    if np.any(mass <= 0):
        raise BandwidthError(f"bandwidth {h} too small for grid spacing {grid.spacing}")
    out = raw / mass[:, None]
    return out[0] if np.ndim(X) == 0 else out


def kernel_patches(grid: GridSpec, X, h: float, kernel: Kernel):
    """Compact-support version of :func:`kernel_weights`.

    Returns ``(index, weight)`` arrays of shape ``(n, s)``: node indices of
    each observation's support window and the normalised weights there.
    Indices past the last node are clipped and carry zero weight.
    """
    h = float(h)
    if not h > 0:
        raise BandwidthError(f"bandwidth must be positive, got {h}")
    M = grid.points
    dx = grid.spacing
    s = min(M, int(np.floor(2.0 * h / dx)) + 2)
    lo = np.ceil((X - h) / dx - 1e-9).astype(int)
    lo = np.clip(lo, 0, M - s)
    idx = lo[:, None] + np.arange(s)[None, :]
    raw = kernel((X[:, None] - grid.nodes[idx]) / h) / h
    mass = (raw * grid.weights[idx]).sum(axis=1)
    if np.any(mass <= 0):
        raise BandwidthError(f"bandwidth {h} too small for grid spacing {dx}")
    return idx, raw / mass[:, None]


def integrate(grid: GridSpec, values, axes=None, lead: int = 0):
    """Trapezoid reduction of a grid function over the selected grid axes.

    ``values`` has ``lead`` leading non-grid dimensions followed by grid
    axes.  ``axes`` indexes the grid axes to integrate out (default: all).
    """
    values = np.asarray(values, dtype=float)
    ngrid = values.ndim - lead
    if axes is None:
        axes = range(ngrid)
    axes = sorted(set(int(a) for a in axes), reverse=True)
    for a in axes:
        if a < 0 or a >= ngrid:
            raise IndexError(f"grid axis {a} out of range for {ngrid}-d values")
        if values.shape[lead + a] != grid.points:
            raise ValueError("values are not sampled on this grid")
        values = np.tensordot(values, grid.weights, axes=([lead + a], [0]))
    return values


def marginal(grid: GridSpec, values, keep, lead: int = 0):
    """Integrate out every grid axis except those in ``keep`` (order kept)."""
    ngrid = np.ndim(values) - lead
    drop = [a for a in range(ngrid) if a not in keep]
    return integrate(grid, values, drop, lead=lead)

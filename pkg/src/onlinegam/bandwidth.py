"""Plug-in bandwidth selection driven by two online pilot fits.

A local-linear pilot at ``h_sigma = R N^{-1/5}`` supplies the variance
functional and the marginal densities; a local-quadratic pilot at
``h_theta = G N^{-1/7}`` supplies the curvature integrals.  The main
bandwidth is ``C(K) {sigma2 / (theta N)}^{1/5}``, clamped to a range the
grid can resolve.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blockstats import DataBlock
from .family import get_family
from .grid import GridSpec, get_kernel, kernel_weights
from .solver import SolverConfig, batch_fit, pool_blocks, process_block
from .store import StreamState

THETA_FLOOR = 1e-8
H_MAX = 0.5


@dataclass
class BandwidthReport:
    """Per-block bandwidth summary (all arrays indexed by component)."""

    K: int
    N: int
    h: np.ndarray
    theta: np.ndarray | None = None
    sigma2: np.ndarray | None = None
    sigma2_field: np.ndarray | None = None
    density: np.ndarray | None = None
    h_sigma: np.ndarray | None = None
    h_theta: np.ndarray | None = None
    excluded_nodes: int = 0
    h_star: np.ndarray | None = None

    def as_record(self) -> dict:
        rec = {"K": self.K, "N": self.N, "h": self.h.tolist()}
        for name in ("theta", "sigma2", "h_sigma", "h_theta", "h_star"):
            val = getattr(self, name)
            if val is not None:
                rec[name] = np.asarray(val).tolist()
        rec["excluded_nodes"] = self.excluded_nodes
        return rec


def pilot_rule(N: int, const: float, rate: float, d: int, grid: GridSpec) -> np.ndarray:
    """``const * N**(-rate)`` for every axis, kept inside [min_bandwidth, 1]."""
    h = const * float(N) ** (-rate)
    return np.full(d, min(max(h, grid.min_bandwidth), 1.0))


def online_bandwidth(theta, sigma2, N: int, kernel="epanechnikov", h_min: float = 0.0,
                     h_max: float = H_MAX, floor: float = THETA_FLOOR) -> np.ndarray:
    """``C(K) {sigma2 / (theta N)}^{1/5}`` clamped to ``[h_min, h_max]``."""
    theta = np.maximum(np.asarray(theta, dtype=float), floor)
    sigma2 = np.asarray(sigma2, dtype=float)
    if np.any(sigma2 <= 0) or N <= 0:
        raise ValueError("sigma2 and N must be positive")
    h = get_kernel(kernel).constant * (sigma2 / (theta * N)) ** 0.2
    return np.clip(h, h_min, h_max)


def block_density(X, h, grid: GridSpec, kernel="epanechnikov") -> np.ndarray:
    """Mean normalised kernel mass of the block on each axis, shape (d, M)."""
    X = np.atleast_2d(X)
    h = np.broadcast_to(np.asarray(h, dtype=float), (X.shape[1],))
    return np.stack([kernel_weights(grid, X[:, j], h[j], kernel).mean(axis=0)
                     for j in range(X.shape[1])])


def variance_integrand(family, eta) -> np.ndarray:
    """``1 / {V(m) g'(m)^2}`` at ``m = g^{-1}(eta)``."""
    family = get_family(family)
    mu = family.inverse_link(eta)
    return 1.0 / (family.variance(mu) * family.dlink(mu) ** 2)


def block_numerator(X, f, h, grid: GridSpec, kernel="epanechnikov") -> np.ndarray:
    """Mean of ``f_i`` times the normalised kernel mass, shape (d, M)."""
    X = np.atleast_2d(X)
    h = np.broadcast_to(np.asarray(h, dtype=float), (X.shape[1],))
    return np.stack([f @ kernel_weights(grid, X[:, j], h[j], kernel) / X.shape[0]
                     for j in range(X.shape[1])])


def sigma_from_fields(density, numerator, grid: GridSpec, dispersion: float = 1.0,
                      rel_mass: float = 1e-3):
    """Kernel-regression inverse ``sigma_j^2(x) = p_j(x) / num_j(x)`` and its integral.

    Nodes whose density is below ``rel_mass`` times the axis maximum are
    dropped from the integral, which is rescaled by the retained quadrature
    weight.  Returns ``(field, sigma2, excluded)``; excluded entries of the
    field are NaN.
    """
    density = np.asarray(density, dtype=float)
    numerator = np.asarray(numerator, dtype=float)
    keep = (density > rel_mass * density.max(axis=1, keepdims=True)) & (numerator > 0)
    fld = np.full(density.shape, np.nan)
    fld[keep] = dispersion * density[keep] / numerator[keep]
    q = grid.weights
    sigma2 = np.empty(density.shape[0])
    for j in range(density.shape[0]):
        wq = q * keep[j]
        if wq.sum() == 0:
            raise ValueError(f"no usable density mass on axis {j + 1}")
        sigma2[j] = np.nansum(fld[j] * wq) / wq.sum()
    return fld, sigma2, int((~keep).sum())


def theta_from_estimate(estimate, density, grid: GridSpec) -> np.ndarray:
    """``int (beta_j'')^2 p_j`` from a local-quadratic estimate."""
    if estimate.degree < 2:
        raise ValueError("curvature needs a local-quadratic estimate")
    h = estimate.bandwidth
    second = 2.0 * estimate.derivatives[:, 1] / h[:, None] ** 2
    return np.maximum((second**2 * density) @ grid.weights, 0.0)


@dataclass
class PilotState:
    """Both pilot streams plus the running density / variance fields."""

    sigma: StreamState
    theta: StreamState
    density: np.ndarray
    numerator: np.ndarray
    dispersion_sum: float = 0.0
    N: int = 0
    G: float = 0.5
    R: float = 0.5


def pilot_sigma(pilot: PilotState, grid: GridSpec):
    """(sigma2 per component, sigma2 field, excluded node count)."""
    fam = get_family(pilot.sigma.family)
    phi = pilot.dispersion_sum if fam.free_dispersion else 1.0
    fld, s2, excl = sigma_from_fields(pilot.density, pilot.numerator, grid, phi)
    return s2, fld, excl


def pilot_theta(pilot: PilotState, grid: GridSpec) -> np.ndarray:
    return theta_from_estimate(pilot.theta.estimate, pilot.density, grid)


def density_estimate(pilot: PilotState) -> np.ndarray:
    return pilot.density


class OnlineBandwidthSelector:
    """Advances the two pilot fits block by block and returns ``h_tilde_K``."""

    mode = "pilot"

    def __init__(self, grid: GridSpec, family, kernel="epanechnikov", G: float = 0.5,
                 R: float = 0.5, L_pilot: int = 10, solver: SolverConfig | None = None,
                 h_max: float = H_MAX):
        if not (G > 0 and R > 0):
            raise ValueError("pilot constants G and R must be positive")
        self.grid = grid
        self.family = get_family(family)
        self.kernel = get_kernel(kernel)
        self.solver = solver or SolverConfig()
        self.h_max = h_max
        zeros = np.zeros((grid.d, grid.points))
        self.pilot = PilotState(
            sigma=StreamState(grid, self.family.name, self.kernel.name, L_pilot, degree=1),
            theta=StreamState(grid, self.family.name, self.kernel.name, L_pilot, degree=2),
            density=zeros.copy(), numerator=zeros.copy(), G=G, R=R)

    def update(self, block: DataBlock) -> BandwidthReport:
        p = self.pilot
        grid = self.grid
        N = p.N + block.n
        w = block.n / N
        h_sig = pilot_rule(N, p.R, 0.2, grid.d, grid)
        h_th = pilot_rule(N, p.G, 1.0 / 7.0, grid.d, grid)
        p.sigma, _, _ = process_block(p.sigma, block, h_sig, self.solver)
        p.theta, _, _ = process_block(p.theta, block, h_th, self.solver)
        eta = p.sigma.estimate.predict(grid, block.X)
        f = variance_integrand(self.family, eta)
        p.density = (1 - w) * p.density + w * block_density(block.X, h_sig, grid, self.kernel)
        p.numerator = (1 - w) * p.numerator + w * block_numerator(block.X, f, h_sig, grid,
                                                                  self.kernel)
        if self.family.free_dispersion:
            mu = self.family.inverse_link(eta)
            pearson = float(np.mean((block.Y - mu) ** 2 / self.family.variance(mu)))
            p.dispersion_sum = (1 - w) * p.dispersion_sum + w * pearson
        p.N = N
        s2, fld, excl = pilot_sigma(p, grid)
        theta = pilot_theta(p, grid)
        h = online_bandwidth(theta, s2, N, self.kernel, grid.min_bandwidth, self.h_max)
        return BandwidthReport(p.sigma.K, N, h, theta, s2, fld, p.density.copy(),
                               h_sig, h_th, excl)


class FixedBandwidth:
    """Oracle mode: the same bandwidth for every block."""

    mode = "fixed"

    def __init__(self, h, d: int):
        self.h = np.broadcast_to(np.asarray(h, dtype=float), (d,)).copy()
        if np.any(self.h <= 0):
            raise ValueError("bandwidth must be positive")
        self.K = 0
        self.N = 0

    def update(self, block: DataBlock) -> BandwidthReport:
        self.K += 1
        self.N += block.n
        return BandwidthReport(self.K, self.N, self.h.copy())


class ScheduleBandwidth(FixedBandwidth):
    """Oracle mode: row K-1 of a supplied (K, d) schedule for block K."""

    mode = "schedule"

    def __init__(self, schedule, d: int):
        sched = np.atleast_2d(np.asarray(schedule, dtype=float))
        if sched.shape[1] != d or np.any(sched <= 0):
            raise ValueError("schedule must be (K, d) with positive entries")
        super().__init__(sched[0], d)
        self.schedule = sched

    def update(self, block: DataBlock) -> BandwidthReport:
        if self.K >= len(self.schedule):
            raise ValueError(f"bandwidth schedule exhausted after {len(self.schedule)} blocks")
        self.h = self.schedule[self.K].copy()
        return super().update(block)


def batch_bandwidth(data, grid: GridSpec, family, kernel="epanechnikov", G: float = 0.5,
                    R: float = 0.5, solver: SolverConfig | None = None,
                    h_max: float = H_MAX) -> BandwidthReport:
    """Plug-in bandwidth from batch pilot fits on the pooled data."""
    family = get_family(family)
    block = data if isinstance(data, DataBlock) else pool_blocks(data)
    N = block.n
    h_sig = pilot_rule(N, R, 0.2, grid.d, grid)
    h_th = pilot_rule(N, G, 1.0 / 7.0, grid.d, grid)
    fit_sig, _ = batch_fit(block, h_sig, grid, family, kernel, 1, solver)
    fit_th, _ = batch_fit(block, h_th, grid, family, kernel, 2, solver)
    eta = fit_sig.predict(grid, block.X)
    density = block_density(block.X, h_sig, grid, kernel)
    numerator = block_numerator(block.X, variance_integrand(family, eta), h_sig, grid, kernel)
    phi = 1.0
    if family.free_dispersion:
        mu = family.inverse_link(eta)
        phi = float(np.mean((block.Y - mu) ** 2 / family.variance(mu)))
    fld, s2, excl = sigma_from_fields(density, numerator, grid, phi)
    theta = theta_from_estimate(fit_th, density, grid)
    h = online_bandwidth(theta, s2, N, kernel, grid.min_bandwidth, h_max)
    return BandwidthReport(0, N, h, theta, s2, fld, density, h_sig, h_th, excl)

"""Poisson additive simulation design and its analytic reference quantities.

Covariates follow a bivariate normal with zero means, variances 10 and
correlation 0.9, truncated to the unit square by rejection.  The response
is Poisson with log-mean ``2 + cos(sqrt(2) pi x1) + (x2 + sin(2 pi x2)) / 2``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .blockstats import DataBlock
from .grid import get_kernel

# Nominal centring constants of this design (quadrature gives a different mean, see SimulationTruth).
NOMINAL_INTERCEPT = 2.544
NOMINAL_OFFSETS = (0.227, 0.317)

MEAN = np.zeros(2)
COV = 10.0 * np.array([[1.0, 0.9], [0.9, 1.0]])


def beta1(x):
    return np.cos(np.sqrt(2.0) * np.pi * np.asarray(x, dtype=float))


def beta2(x):
    x = np.asarray(x, dtype=float)
    return (x + np.sin(2.0 * np.pi * x)) / 2.0


def beta1_dd(x):
    return -2.0 * np.pi**2 * np.cos(np.sqrt(2.0) * np.pi * np.asarray(x, dtype=float))


def beta2_dd(x):
    return -2.0 * np.pi**2 * np.sin(2.0 * np.pi * np.asarray(x, dtype=float))


COMPONENTS = (beta1, beta2)
SECOND_DERIVATIVES = (beta1_dd, beta2_dd)


def log_mean(X) -> np.ndarray:
    X = np.atleast_2d(X)
    return 2.0 + beta1(X[:, 0]) + beta2(X[:, 1])


def truncated_normal(rng: np.random.Generator, n: int, batch: int | None = None) -> np.ndarray:
    """``n`` draws from the design distribution by rejection."""
    out = np.empty((0, 2))
    batch = batch or max(64, 12 * n)
    while out.shape[0] < n:
        Z = rng.multivariate_normal(MEAN, COV, size=batch)
        keep = np.all((Z >= 0.0) & (Z <= 1.0), axis=1)
        out = np.vstack([out, Z[keep]])
    return out[:n]


def block_size(rng: np.random.Generator, mean: float = 100.0, sd: float = 10.0) -> int:
    return max(1, int(np.rint(rng.normal(mean, sd))))


def simulate(seed: int, K: int, mean_size: float = 100.0, sd_size: float = 10.0):
    """Yield ``K`` reproducible blocks of the simulation design."""
    rng = np.random.default_rng(seed)
    for k in range(1, K + 1):
        n = block_size(rng, mean_size, sd_size)
        X = truncated_normal(rng, n)
        Y = rng.poisson(np.exp(log_mean(X))).astype(float)
        yield DataBlock(k, X, Y)


@dataclass
class SimulationTruth:
    """Quadrature-based reference quantities for the simulation design.

    The truncated density is tabulated on a ``points`` x ``points``
    trapezoid grid of the unit square.
    """

    points: int = 801

    @cached_property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.points)

    @cached_property
    def weights(self) -> np.ndarray:
        q = np.full(self.points, 1.0 / (self.points - 1))
        q[[0, -1]] *= 0.5
        return q

    @cached_property
    def density(self) -> np.ndarray:
        x = self.nodes
        X1, X2 = np.meshgrid(x, x, indexing="ij")
        P = np.linalg.inv(COV)
        quad = P[0, 0] * X1**2 + 2 * P[0, 1] * X1 * X2 + P[1, 1] * X2**2
        dens = np.exp(-0.5 * quad)
        return dens / (self.weights @ dens @ self.weights)

    def marginal(self, j: int) -> np.ndarray:
        """Marginal density of covariate j on ``nodes``."""
        return self.density @ self.weights if j == 0 else self.weights @ self.density

    @cached_property
    def mean_surface(self) -> np.ndarray:
        X1, X2 = np.meshgrid(self.nodes, self.nodes, indexing="ij")
        return np.exp(2.0 + beta1(X1) + beta2(X2))

    def conditional_mean(self, j: int) -> np.ndarray:
        """E(m(X) | X_j = x) on ``nodes``."""
        mp = self.mean_surface * self.density
        num = mp @ self.weights if j == 0 else self.weights @ mp
        return num / self.marginal(j)

    def sigma2_field(self, j: int) -> np.ndarray:
        # Poisson with log link: V(m) g'(m)^2 = 1/m
        return 1.0 / self.conditional_mean(j)

    def sigma2(self, j: int) -> float:
        return float(self.sigma2_field(j) @ self.weights)

    def theta(self, j: int) -> float:
        return float((SECOND_DERIVATIVES[j](self.nodes) ** 2 * self.marginal(j)) @ self.weights)

    def optimal_bandwidth(self, N: int, kernel="epanechnikov") -> np.ndarray:
        c = get_kernel(kernel).constant
        return np.array([c * (self.sigma2(j) / (self.theta(j) * N)) ** 0.2 for j in range(2)])

    def expected_log_mean(self) -> float:
        """E log m(X) under the design density."""
        X1, X2 = np.meshgrid(self.nodes, self.nodes, indexing="ij")
        lm = 2.0 + beta1(X1) + beta2(X2)
        return float(self.weights @ (lm * self.density) @ self.weights)


def centred_component(j: int, x) -> np.ndarray:
    """Component j minus its mean over [0, 1] (uniform weight)."""
    f = COMPONENTS[j]
    xs = np.linspace(0.0, 1.0, 2001)
    q = np.full(xs.size, 1.0 / (xs.size - 1))
    q[[0, -1]] *= 0.5
    return f(x) - float(f(xs) @ q)

"""Grid-sampled additive estimate (intercept, components, scaled derivatives)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridSpec, integrate


@dataclass
class AdditiveEstimate:
    """Intercept plus per-axis component functions sampled on the grid.

    ``derivatives[j, 0]`` holds ``h_j * beta_j'`` (the bandwidth-scaled slope)
    and, for a local-quadratic fit, ``derivatives[j, 1]`` holds
    ``h_j**2 * beta_j'' / 2``.  ``bandwidth`` is the ``h`` used for scaling.
    """

    intercept: float
    components: np.ndarray  # (d, M)
    derivatives: np.ndarray  # (d, degree, M)
    bandwidth: np.ndarray  # (d,)

    def __post_init__(self):
        self.intercept = float(self.intercept)
        self.components = np.asarray(self.components, dtype=float)
        self.derivatives = np.asarray(self.derivatives, dtype=float)
        self.bandwidth = np.asarray(self.bandwidth, dtype=float)

    @property
    def d(self) -> int:
        return self.components.shape[0]

    @property
    def degree(self) -> int:
        return self.derivatives.shape[1]

    @property
    def beta1(self) -> np.ndarray:
        """Scaled first derivatives ``h_j beta_j'`` on the grid, shape (d, M)."""
        return self.derivatives[:, 0]

    @classmethod
    def zeros(cls, grid: GridSpec, bandwidth, degree: int = 1) -> "AdditiveEstimate":
        d, M = grid.d, grid.points
        return cls(0.0, np.zeros((d, M)), np.zeros((d, degree, M)),
                   np.broadcast_to(np.asarray(bandwidth, float), (d,)).copy())

    def raw_coefficients(self) -> np.ndarray:
        """Unscaled local coefficients, shape (d, degree+1, M).

        Row 0 is ``beta_j``, row 1 ``beta_j'``, row 2 ``beta_j''/2``.
        """
        d, p, M = self.derivatives.shape
        out = np.empty((d, p + 1, M))
        out[:, 0] = self.components
        for a in range(1, p + 1):
            out[:, a] = self.derivatives[:, a - 1] / self.bandwidth[:, None] ** a
        return out

    @classmethod
    def from_raw(cls, intercept, raw, bandwidth) -> "AdditiveEstimate":
        raw = np.asarray(raw, dtype=float)
        h = np.asarray(bandwidth, dtype=float)
        p = raw.shape[1] - 1
        derivs = np.stack([raw[:, a] * h[:, None] ** a for a in range(1, p + 1)], axis=1)
        return cls(intercept, raw[:, 0].copy(), derivs, h)

    def with_bandwidth(self, bandwidth) -> "AdditiveEstimate":
        """Same function, derivatives rescaled to a new bandwidth."""
        return AdditiveEstimate.from_raw(self.intercept, self.raw_coefficients(), bandwidth)

    def with_degree(self, degree: int) -> "AdditiveEstimate":
        raw = self.raw_coefficients()
        p = raw.shape[1] - 1
        if degree < p:
            raw = raw[:, : degree + 1]
        elif degree > p:
            pad = np.zeros((raw.shape[0], degree - p, raw.shape[2]))
            raw = np.concatenate([raw, pad], axis=1)
        return AdditiveEstimate.from_raw(self.intercept, raw, self.bandwidth)

    def copy(self) -> "AdditiveEstimate":
        return AdditiveEstimate(self.intercept, self.components.copy(),
                                self.derivatives.copy(), self.bandwidth.copy())

    def local_vector(self, grid: GridSpec) -> np.ndarray:
        """Coefficient vector b(x) on the full tensor grid, shape (P, *grid).

        ``b_0(x) = beta_0 + sum_j beta_j(x_j)``, ``b_j`` the slope of
        component j, ``b_{d+j}`` its half second derivative.
        """
        d = self.d
        raw = self.raw_coefficients()
        p = raw.shape[1] - 1
        shape = grid.shape
        out = np.zeros((1 + p * d,) + shape)
        out[0] = self.intercept
        for j in range(d):
            view = [1] * d
            view[j] = grid.points
            out[0] += raw[j, 0].reshape(view)
            for a in range(1, p + 1):
                out[(a - 1) * d + 1 + j] = np.broadcast_to(raw[j, a].reshape(view), shape)
        return out

    def predict(self, grid: GridSpec, X) -> np.ndarray:
        """Linear predictor at points ``X`` (n, d) by linear interpolation."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        eta = np.full(X.shape[0], self.intercept)
        for j in range(self.d):
            eta += np.interp(X[:, j], grid.nodes, self.components[j])
        return eta

    def sup_distance(self, other: "AdditiveEstimate") -> float:
        """Sup-norm over intercept, components and scaled derivatives."""
        return float(max(
            abs(self.intercept - other.intercept),
            np.max(np.abs(self.components - other.components)),
            np.max(np.abs(self.derivatives - other.derivatives)) if self.derivatives.size else 0.0,
        ))

    def component_means(self, grid: GridSpec) -> np.ndarray:
        return integrate(grid, self.components, lead=1)

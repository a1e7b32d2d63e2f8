"""Per-block grid statistics: U, V, W, S_j and the stored sub-statistics.

For a block of observations and a bandwidth, the local design row at grid
point x is ``(1, X_1 - x_1, ..., X_d - x_d)`` (plus squared differences for
a local-quadratic fit).  With kernel weights K_h(x, X_i) and the family
derivatives q1, q2, q3 evaluated at the local expansion b(x)' X_i(x):

    U(x)  = n^-1 sum_i q1_i K_i X_i X_i'
    V(x)  = n^-1 sum_i q2_i K_i X_i X_i'
    T3(x) = n^-1 sum_i q3_i K_i X_i (x) X_i (x) X_i

``W = T3[0]`` and ``S_j = T3[j]``.  Everything is accumulated through
compact kernel patches and scattered onto the dense grid.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np

from .estimate import AdditiveEstimate
from .family import Family, get_family
from .grid import GridSpec, Kernel, get_kernel, kernel_patches, kernel_weights


class BlockError(ValueError):
    pass


@dataclass
class DataBlock:
    """One block of observations with covariates in [0, 1]^d."""

    index: int
    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        if self.X.ndim != 2 or self.Y.ndim != 1 or self.X.shape[0] != self.Y.shape[0]:
            raise BlockError("X must be (n, d) and Y (n,)")
        if self.X.shape[0] < 1:
            raise BlockError("empty block")
        if not np.all(np.isfinite(self.X)):
            raise BlockError("non-finite covariate")
        bad = (self.X < 0.0) | (self.X > 1.0)
        if bad.any():
            col = int(np.nonzero(bad.any(axis=0))[0][0])
            raise BlockError(f"covariate x{col + 1} outside [0, 1] in block {self.index}")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def check(self, family: Family | str) -> "DataBlock":
        get_family(family).validate_response(self.Y)
        return self


def design_exponents(d: int, degree: int) -> np.ndarray:
    """Per-column exponents of the local design, shape (P, d)."""
    rows = [np.zeros(d, dtype=int)]
    for a in range(1, degree + 1):
        for j in range(d):
            e = np.zeros(d, dtype=int)
            e[j] = a
            rows.append(e)
    return np.array(rows)


def component_index(d: int, degree: int, j: int) -> list[int]:
    """Design columns belonging to component j: intercept, slope, curvature."""
    return [0] + [a * d + 1 + j for a in range(degree)]


@dataclass
class BlockMatrices:
    """U, V and the third-order tensor T3 on the grid for one bandwidth."""

    U: np.ndarray  # (P, P, *grid)
    V: np.ndarray  # (P, P, *grid)
    T3: np.ndarray | None  # (P, P, P, *grid)
    bandwidth: np.ndarray
    n: int
    degree: int = 1

    @property
    def W(self):
        return None if self.T3 is None else self.T3[0]

    def S(self, j: int):
        """S_j, the third-order tensor slice for slope row j (0-based)."""
        return None if self.T3 is None else self.T3[1 + j]


@dataclass
class SubStatistics:
    """Sub-sufficient statistics of one block at one candidate bandwidth.

    ``Vb = V b``, ``T3b[r] = T3[r] b`` and ``bT3b[r] = b' T3[r] b`` where b is
    the local coefficient vector of the expansion point ``beta``.  The
    W/S_j fields of the stored set are the r = 0 and r = j slices.
    """

    U: np.ndarray
    V: np.ndarray
    T3: np.ndarray
    Vb: np.ndarray
    T3b: np.ndarray
    bT3b: np.ndarray
    eta: np.ndarray
    beta: AdditiveEstimate
    n: int

    @property
    def W(self):
        return self.T3[0]

    @property
    def Wb(self):
        return self.T3b[0]

    @property
    def bWb(self):
        return self.bT3b[0]

    def S(self, j):
        return self.T3[1 + j]

    def Sb(self, j):
        return self.T3b[1 + j]

    def bSb(self, j):
        return self.bT3b[1 + j]


def _unique_sums(exps, order):
    keys = {}
    P = len(exps)
    for combo in combinations_with_replacement(range(P), order):
        e = tuple(np.sum(exps[list(combo)], axis=0))
        keys.setdefault(e, []).append(combo)
    return keys


def build_block_matrices(block: DataBlock, beta: AdditiveEstimate, h, grid: GridSpec,
                         family: Family | str, kernel: Kernel | str = "epanechnikov",
                         degree: int = 1, third: bool = True,
                         chunk: int = 4000) -> BlockMatrices:
    """Grid fields U, V (and T3 when ``third``) for one block at bandwidth h."""
    family = get_family(family)
    kernel = get_kernel(kernel)
    d, M = grid.d, grid.points
    if block.d != d:
        raise BlockError(f"block has {block.d} covariates, grid has {d}")
    h = np.broadcast_to(np.asarray(h, dtype=float), (d,)).copy()
    exps = design_exponents(d, degree)
    P = len(exps)
    pair_keys = _unique_sums(exps, 2)
    triple_keys = _unique_sums(exps, 3) if third else {}
    max_pow = max(max(max(e) for e in pair_keys), max((max(e) for e in triple_keys), default=0))

    raw = beta.raw_coefficients()
    if raw.shape[1] - 1 < degree:
        raw = beta.with_degree(degree).raw_coefficients()
    G = M**d
    strides = [M ** (d - 1 - j) for j in range(d)]
    mom_u = {e: np.zeros(G) for e in pair_keys}
    mom_v = {e: np.zeros(G) for e in pair_keys}
    mom_w = {e: np.zeros(G) for e in triple_keys}

    for start in range(0, block.n, chunk):
        Xc = block.X[start:start + chunk]
        Yc = block.Y[start:start + chunk]
        n = Xc.shape[0]
        eta = np.full((n,) + (1,) * d, beta.intercept)
        K = np.ones((n,) + (1,) * d)
        flat = np.zeros((n,) + (1,) * d, dtype=np.int64)
        powers = []
        for j in range(d):
            idx, kw = kernel_patches(grid, Xc[:, j], h[j], kernel)
            diff = Xc[:, j, None] - grid.nodes[idx]
            shape = [n] + [1] * d
            shape[1 + j] = idx.shape[1]
            local = raw[j, 0][idx].copy()
            for a in range(1, degree + 1):
                local += diff**a * raw[j, a][idx]
            eta = eta + local.reshape(shape)
            K = K * kw.reshape(shape)
            flat = flat + (idx * strides[j]).reshape(shape)
            pw = [np.ones(shape)]
            for a in range(1, max_pow + 1):
                pw.append((diff**a).reshape(shape))
            powers.append(pw)
        ycol = Yc.reshape((n,) + (1,) * d)
        q1, q2, q3 = family.derivatives(eta, ycol)
        wu, wv = q1 * K, q2 * K
        ww = q3 * K if third else None
        flat = np.broadcast_to(flat, K.shape).ravel()

        def mono(e):
            out = powers[0][e[0]]
            for j in range(1, d):
                out = out * powers[j][e[j]]
            return out

        for e in pair_keys:
            m = mono(e)
            mom_u[e] += np.bincount(flat, (wu * m).ravel(), minlength=G)
            mom_v[e] += np.bincount(flat, (wv * m).ravel(), minlength=G)
        for e in triple_keys:
            mom_w[e] += np.bincount(flat, (ww * mono(e)).ravel(), minlength=G)

    n_total = block.n
    U = np.empty((P, P, G))
    V = np.empty((P, P, G))
    for e, combos in pair_keys.items():
        for p, q in combos:
            U[p, q] = U[q, p] = mom_u[e] / n_total
            V[p, q] = V[q, p] = mom_v[e] / n_total
    T3 = None
    if third:
        T3 = np.empty((P, P, P, G))
        for e, combos in triple_keys.items():
            val = mom_w[e] / n_total
            for combo in combos:
                for perm in set(_perms(combo)):
                    T3[perm] = val
        T3 = T3.reshape((P, P, P) + grid.shape)
    return BlockMatrices(U.reshape((P, P) + grid.shape), V.reshape((P, P) + grid.shape),
                         T3, h, n_total, degree)


def _perms(combo):
    a, b, c = combo
    return [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]


def contract_statistics(mats: BlockMatrices, beta: AdditiveEstimate, grid: GridSpec):
    """(Vb, T3b, bT3b) of the matrices against the local vector of ``beta``."""
    b = beta.with_degree(mats.degree).local_vector(grid)
    Vb = np.einsum("rc...,c...->r...", mats.V, b)
    T3b = np.einsum("rcq...,q...->rc...", mats.T3, b)
    bT3b = np.einsum("rc...,c...->r...", T3b, b)
    return Vb, T3b, bT3b


def build_sub_statistics(block: DataBlock, beta: AdditiveEstimate, eta, grid: GridSpec,
                         family: Family | str, kernel: Kernel | str = "epanechnikov",
                         degree: int = 1) -> SubStatistics:
    """Sub-sufficient statistics of ``block`` expanded at ``beta`` for bandwidth ``eta``."""
    mats = build_block_matrices(block, beta, eta, grid, family, kernel, degree, third=True)
    Vb, T3b, bT3b = contract_statistics(mats, beta, grid)
    return SubStatistics(mats.U, mats.V, mats.T3, Vb, T3b, bT3b,
                         mats.bandwidth.copy(), beta.copy(), block.n)


def observation_weights(block: DataBlock, beta: AdditiveEstimate, h, node, grid: GridSpec,
                        family: Family | str, kernel: Kernel | str = "epanechnikov"):
    """Weights (u, nu, omega) of every observation at one grid node.

    ``node`` is a tuple of per-axis node indices.  The product kernel uses
    the same boundary normalisation as the grid statistics.
    """
    family = get_family(family)
    kernel = get_kernel(kernel)
    h = np.broadcast_to(np.asarray(h, dtype=float), (grid.d,))
    raw = beta.raw_coefficients()
    K = np.ones(block.n)
    eta = np.full(block.n, beta.intercept)
    for j, k in enumerate(node):
        K *= kernel_weights(grid, block.X[:, j], h[j], kernel)[:, k]
        diff = block.X[:, j] - grid.nodes[k]
        eta += raw[j, 0, k]
        for a in range(1, raw.shape[1]):
            eta += diff**a * raw[j, a, k]
    q1, q2, q3 = family.derivatives(eta, block.Y)
    return q1 * K, q2 * K, q3 * K

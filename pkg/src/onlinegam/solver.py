"""Double-loop smooth backfitting solver (online update and batch fit).

The outer loop linearises the aggregated score equations at the current
iterate (a Newton step).  The stored blocks enter through their
second-order expansion; the current block is evaluated exactly.  Each
linear system is solved by Gauss-Seidel sweeps over the components, then
the update is renormalised so every component satisfies the V-norm
constraint.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .blockstats import (BlockMatrices, DataBlock, build_block_matrices,
                         build_sub_statistics, component_index)
from .estimate import AdditiveEstimate
from .family import get_family
from .grid import GridSpec, integrate, marginal
from .store import StatisticsSet, StreamState, advance, candidate_sequence, match_index


class InitWarning(UserWarning):
    """Parametric initialisation fell back to zero functions."""


@dataclass
class SolverConfig:
    eps_outer: float = 1e-6
    eps_inner: float = 1e-8
    max_outer: int = 50
    max_inner: int = 100
    max_step: float = 5.0
    keep_iterates: bool = False
    track_residuals: bool = False

    def __post_init__(self):
        if not (self.eps_outer > 0 and self.eps_inner > 0 and self.max_step > 0):
            raise ValueError("solver tolerances must be positive")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("iteration caps must be at least 1")


@dataclass
class SolveInfo:
    outer_iterations: int = 0
    inner_sweeps: list[int] = field(default_factory=list)
    steps: list[float] = field(default_factory=list)
    converged: bool = False
    flagged_nodes: int = 0
    residual: float = float("nan")
    inner_residuals: list[list[float]] = field(default_factory=list)
    iterates: list[AdditiveEstimate] = field(default_factory=list)


@dataclass
class BlockDiagnostics:
    K: int
    N: int
    n: int
    bandwidth: list[float]
    rho_inv: list[float]
    rho_sq: list[float]
    outer_iterations: int
    inner_sweeps: int
    converged: bool
    residual: float
    flagged_nodes: int
    seconds: float
    matches: list[int]

    def as_record(self) -> dict:
        return dict(self.__dict__)


@dataclass
class AssembledSystem:
    """Linearised equations at one iterate.

    ``score`` is the aggregated local score s(x) (P, *grid), ``jac`` its
    Jacobian (P, P, *grid) and ``V`` the aggregated V without the
    third-order corrections (used for the norm constraint).
    ``M_j[j]`` (q, q, M) and ``M_jl[(j, l)]`` (q, q, M, M) are the
    marginalised blocks, ``zeta[j]`` (q, M) the right-hand sides.
    """

    score: np.ndarray
    jac: np.ndarray
    V: np.ndarray
    M_j: list
    M_jl: dict
    zeta: list
    score0: float
    jac00: float
    degree: int


def _einsum_vec(mat, vec):
    return np.einsum("rc...,c...->r...", mat, vec)


def assemble_system(stored: StatisticsSet | None, current: BlockMatrices,
                    beta: AdditiveEstimate, w: float, grid: GridSpec) -> AssembledSystem:
    """Aggregate stored (expanded) and current (exact) statistics at ``beta``."""
    if not 0.0 < w <= 1.0:
        raise ValueError("block weight must lie in (0, 1]")
    degree = current.degree
    d = grid.d
    b = beta.with_degree(degree).local_vector(grid)
    score = w * current.U[0]
    jac = w * current.V
    V = w * current.V
    if stored is not None and w < 1.0:
        quad = (np.einsum("rpq...,p...,q...->r...", stored.T3, b, b)
                - 2.0 * np.einsum("rp...,p...->r...", stored.T3b, b) + stored.bT3b)
        s_stored = stored.U[0] + _einsum_vec(stored.V, b) - stored.Vb + 0.5 * quad
        D1 = np.einsum("rcq...,q...->rc...", stored.T3, b) - stored.T3b
        score = score + (1.0 - w) * s_stored
        jac = jac + (1.0 - w) * (stored.V + D1)
        V = V + (1.0 - w) * stored.V

    M_j, zeta, M_jl = [], [], {}
    idx = [component_index(d, degree, j) for j in range(d)]
    for j in range(d):
        block = jac[np.ix_(idx[j], idx[j])]
        M_j.append(marginal(grid, block, keep=(j,), lead=2))
        zeta.append(-marginal(grid, score[idx[j]], keep=(j,), lead=1))
        for l in range(d):
            if l == j:
                continue
            cross = marginal(grid, jac[np.ix_(idx[j], idx[l])], keep=(j, l), lead=2)
            if j > l:
                cross = np.swapaxes(cross, 2, 3)
            M_jl[(j, l)] = cross
    score0 = float(integrate(grid, score[0]))
    jac00 = float(integrate(grid, jac[0, 0]))
    return AssembledSystem(score, jac, V, M_j, M_jl, zeta, score0, jac00, degree)


def _node_inverses(M_j):
    """Per-node inverses of the diagonal blocks, ridging singular nodes."""
    inverses, flagged = [], 0
    for Mj in M_j:
        A = np.moveaxis(Mj, -1, 0).copy()  # (M, q, q)
        q = A.shape[-1]
        scale = np.abs(np.trace(A, axis1=1, axis2=2))
        with np.errstate(divide="ignore", invalid="ignore"):
            cond = np.linalg.cond(A)
        bad = ~np.isfinite(cond) | (cond > 1e12)
        flagged += int(bad.sum())
        empty = scale == 0
        A[bad & ~empty] += (1e-10 * scale[bad & ~empty])[:, None, None] * np.eye(q)
        A[empty] = np.eye(q)
        inv = np.linalg.inv(A)
        inv[empty] = 0.0
        inverses.append(inv)
    return inverses, flagged


def _cross_terms(system: AssembledSystem, grid: GridSpec, xi, j: int):
    q = grid.weights
    total = 0.0
    for l in range(len(xi)):
        if l != j:
            total = total + np.einsum("abxy,y,by->ax", system.M_jl[(j, l)], q, xi[l])
    return total


def _rhs(system, grid, xi0, xi, j):
    return (system.zeta[j] - xi0 * system.M_j[j][:, 0]
            - _cross_terms(system, grid, xi, j))


def inner_sweep(system: AssembledSystem, xi0: float, xi: list, grid: GridSpec,
                inverses=None) -> list:
    """One Gauss-Seidel cycle: component j sees updated l < j, previous l > j."""
    if inverses is None:
        inverses, _ = _node_inverses(system.M_j)
    xi = [x.copy() for x in xi]
    for j in range(len(xi)):
        rhs = _rhs(system, grid, xi0, xi, j)
        xi[j] = np.einsum("xab,bx->ax", inverses[j], rhs)
    return xi


def inner_residual(system: AssembledSystem, xi0: float, xi: list, grid: GridSpec) -> float:
    """Sup-norm residual of the full linear system for the given increments."""
    res = 0.0
    for j in range(len(xi)):
        lhs = np.einsum("abx,bx->ax", system.M_j[j], xi[j])
        res = max(res, float(np.max(np.abs(lhs - _rhs(system, grid, xi0, xi, j)))))
    return res


def outer_step(system: AssembledSystem, grid: GridSpec, cfg: SolverConfig):
    """Solve the linearised system: returns (xi0, xi list, sweeps, flagged, residuals)."""
    d = grid.d
    q = system.degree + 1
    xi0 = -system.score0 / system.jac00 if system.jac00 != 0 else 0.0
    inverses, flagged = _node_inverses(system.M_j)
    xi = [np.zeros((q, grid.points)) for _ in range(d)]
    residuals = []
    sweeps = 0
    for sweeps in range(1, cfg.max_inner + 1):
        new = inner_sweep(system, xi0, xi, grid, inverses)
        change = max(float(np.max(np.abs(a - b))) for a, b in zip(new, xi))
        xi = new
        if cfg.track_residuals:
            residuals.append(inner_residual(system, xi0, xi, grid))
        if change <= cfg.eps_inner:
            break
    return xi0, xi, sweeps, flagged, residuals


def constraint_values(beta: AdditiveEstimate, V: np.ndarray, grid: GridSpec) -> np.ndarray:
    """<beta_j, e1>_V for each component j under the V-weighted norm."""
    degree = (V.shape[0] - 1) // grid.d
    raw = beta.with_degree(degree).raw_coefficients()
    out = np.empty(grid.d)
    for j in range(grid.d):
        idx = component_index(grid.d, degree, j)
        total = 0.0
        for a, c in enumerate(idx):
            view = [1] * grid.d
            view[j] = grid.points
            total = total + V[0, c] * raw[j, a].reshape(view)
        out[j] = integrate(grid, total)
    return out


def center_components(beta: AdditiveEstimate, V: np.ndarray, grid: GridSpec) -> AdditiveEstimate:
    """Shift constants from components into the intercept so the constraint holds."""
    denom = float(integrate(grid, V[0, 0]))
    if denom == 0:
        return beta
    c = constraint_values(beta, V, grid) / denom
    out = beta.copy()
    out.components = out.components - c[:, None]
    out.intercept = out.intercept + float(c.sum())
    return out


def apply_constraint_update(beta_prev: AdditiveEstimate, xi0: float, xi: list,
                            system: AssembledSystem, grid: GridSpec) -> AdditiveEstimate:
    """beta0 += xi0 + sum c_j, beta_j += xi_j - c_j, derivatives += xi_1j.

    ``c_j`` is taken over the updated component so the result satisfies
    the constraint under this iterate's aggregated V exactly.
    """
    raw = beta_prev.with_degree(system.degree).raw_coefficients()
    raw = raw + np.stack(xi)
    new = AdditiveEstimate.from_raw(beta_prev.intercept + xi0, raw, beta_prev.bandwidth)
    return center_components(new, system.V, grid)


def _guard(xi0, xi, h, max_step):
    size = abs(xi0)
    for j, x in enumerate(xi):
        scale = h[j] ** np.arange(x.shape[0])
        size = max(size, float(np.max(np.abs(x) * scale[:, None])))
    if size > max_step:
        f = max_step / size
        return xi0 * f, [x * f for x in xi]
    return xi0, xi


def solve(block: DataBlock, stored: StatisticsSet | None, w: float, beta_init: AdditiveEstimate,
          h, grid: GridSpec, family, kernel="epanechnikov", degree: int = 1,
          cfg: SolverConfig | None = None):
    """Outer Newton loop for one block against one stored set."""
    cfg = cfg or SolverConfig()
    h = np.broadcast_to(np.asarray(h, dtype=float), (grid.d,)).copy()
    beta = beta_init.with_bandwidth(h).with_degree(degree)
    info = SolveInfo()
    if cfg.keep_iterates:
        info.iterates.append(beta.copy())
    for m in range(1, cfg.max_outer + 1):
        current = build_block_matrices(block, beta, h, grid, family, kernel, degree, third=False)
        system = assemble_system(stored, current, beta, w, grid)
        xi0, xi, sweeps, flagged, residuals = outer_step(system, grid, cfg)
        xi0, xi = _guard(xi0, xi, h, cfg.max_step)
        new = apply_constraint_update(beta, xi0, xi, system, grid)
        info.outer_iterations = m
        info.inner_sweeps.append(sweeps)
        info.flagged_nodes = max(info.flagged_nodes, flagged)
        if cfg.track_residuals:
            info.inner_residuals.append(residuals)
        if not (np.isfinite(new.intercept) and np.all(np.isfinite(new.components))
                and np.all(np.isfinite(new.derivatives))):
            warnings.warn("non-finite iterate; returning previous estimate", RuntimeWarning)
            break
        step = new.sup_distance(beta)
        info.steps.append(step)
        beta = new
        if cfg.keep_iterates:
            info.iterates.append(beta.copy())
        if step <= cfg.eps_outer:
            info.converged = True
            break
    return beta, info


def score_residual(system: AssembledSystem) -> float:
    """Sup-norm of the aggregated score equations (intercept and components)."""
    return max(abs(system.score0), *(float(np.max(np.abs(z))) for z in system.zeta))


def init_parametric(block: DataBlock, family, grid: GridSpec, h, degree: int = 1,
                    max_iter: int = 50) -> AdditiveEstimate:
    """Parametric GLM fit g(m) = b0 + sum_j b_j x_j turned into an additive estimate."""
    family = get_family(family)
    h = np.broadcast_to(np.asarray(h, dtype=float), (grid.d,)).copy()
    n, d = block.X.shape
    Z = np.column_stack([np.ones(n), block.X])
    if n < d + 1 or np.linalg.matrix_rank(Z) < d + 1:
        warnings.warn("singular design for parametric start; using zero functions", InitWarning)
        return AdditiveEstimate.zeros(grid, h, degree)
    lo, hi = family.mean_domain()
    ybar = float(np.mean(block.Y))
    eps = 1e-3
    ybar = min(max(ybar, lo + eps if np.isfinite(lo) else ybar),
               hi - eps if np.isfinite(hi) else ybar)
    coef = np.zeros(d + 1)
    coef[0] = float(family.link(np.array(ybar)))
    for _ in range(max_iter):
        q1, q2, _ = family.derivatives(Z @ coef, block.Y)
        grad = Z.T @ q1
        hess = (Z * q2[:, None]).T @ Z
        try:
            step = np.linalg.solve(hess, -grad)
        except np.linalg.LinAlgError:
            break
        coef = coef + step
        if np.max(np.abs(step)) < 1e-12:
            break
    if not np.all(np.isfinite(coef)):
        warnings.warn("parametric start diverged; using zero functions", InitWarning)
        return AdditiveEstimate.zeros(grid, h, degree)
    xbar = block.X.mean(axis=0)
    raw = np.zeros((d, degree + 1, grid.points))
    raw[:, 0] = coef[1:, None] * (grid.nodes[None, :] - xbar[:, None])
    raw[:, 1] = coef[1:, None]
    intercept = coef[0] + float(coef[1:] @ xbar)
    return AdditiveEstimate.from_raw(intercept, raw, h)


def process_block(state: StreamState, block: DataBlock, h, cfg: SolverConfig | None = None):
    """One online update: solve against stored statistics, then merge the block.

    Returns ``(new_state, diagnostics, info)``.
    """
    t0 = time.perf_counter()
    cfg = cfg or SolverConfig()
    grid = state.grid
    block.check(state.family)
    h = np.broadcast_to(np.asarray(h, dtype=float), (grid.d,)).copy()
    N = state.N + block.n
    w = block.n / N
    cands = candidate_sequence(h, state.L)
    if state.sets:
        stored = state.sets[match_index(cands[0], state.centroids)]
        beta0 = state.estimate
    else:
        stored = None
        beta0 = init_parametric(block, state.family, grid, h, state.degree)
    beta, info = solve(block, stored, w, beta0, h, grid, state.family, state.kernel,
                       state.degree, cfg)
    subs = [build_sub_statistics(block, beta, eta, grid, state.family, state.kernel, state.degree)
            for eta in cands]
    new_state = advance(state, subs, beta, block.n)
    beta = center_components(beta, new_state.sets[0].V, grid)
    new_state.estimate = beta
    current = BlockMatrices(subs[0].U, subs[0].V, None, h, block.n, state.degree)
    info.residual = score_residual(assemble_system(stored, current, beta, w, grid))
    top = new_state.sets[0]
    diag = BlockDiagnostics(
        K=new_state.K, N=N, n=block.n, bandwidth=h.tolist(),
        rho_inv=top.rho_inv.tolist(), rho_sq=top.rho_sq.tolist(),
        outer_iterations=info.outer_iterations, inner_sweeps=int(sum(info.inner_sweeps)),
        converged=info.converged, residual=info.residual, flagged_nodes=info.flagged_nodes,
        seconds=time.perf_counter() - t0,
        matches=new_state.candidates.matches.tolist(),
    )
    if not info.converged:
        warnings.warn(f"block {new_state.K}: outer loop hit the iteration cap", RuntimeWarning)
    return new_state, diag, info


def pool_blocks(blocks) -> DataBlock:
    blocks = list(blocks)
    return DataBlock(0, np.vstack([b.X for b in blocks]), np.concatenate([b.Y for b in blocks]))


def batch_fit(data, h, grid: GridSpec, family, kernel="epanechnikov", degree: int = 1,
              cfg: SolverConfig | None = None, beta_init: AdditiveEstimate | None = None):
    """Classical smooth backfitting on pooled data (one block, nothing stored).

    ``data`` is a DataBlock or an iterable of blocks.  Returns
    ``(estimate, info)``.
    """
    block = data if isinstance(data, DataBlock) else pool_blocks(data)
    block.check(family)
    h = np.broadcast_to(np.asarray(h, dtype=float), (grid.d,)).copy()
    if beta_init is None:
        beta_init = init_parametric(block, family, grid, h, degree)
    beta, info = solve(block, None, 1.0, beta_init, h, grid, family, kernel, degree, cfg)
    final = build_block_matrices(block, beta, h, grid, family, kernel, degree, third=False)
    beta = center_components(beta, final.V, grid)
    info.residual = score_residual(assemble_system(None, final, beta, 1.0, grid))
    return beta, info

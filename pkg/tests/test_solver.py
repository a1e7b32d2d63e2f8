import numpy as np
import pytest

from onlinegam.blockstats import DataBlock, build_block_matrices, build_sub_statistics
from onlinegam.estimate import AdditiveEstimate
from onlinegam.grid import GridSpec, kernel_weights
from onlinegam.simulation import centred_component, simulate
from onlinegam.solver import (InitWarning, SolverConfig, apply_constraint_update, assemble_system,
                              batch_fit, center_components, constraint_values, init_parametric,
                              inner_residual, inner_sweep, outer_step, process_block)
from onlinegam.store import StreamState, merge_statistics

from conftest import make_block


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(eps_outer=0)
    with pytest.raises(ValueError):
        SolverConfig(max_inner=0)


def test_init_linear_gaussian(rng, grid2):
    X = rng.uniform(size=(80, 2))
    Y = 1.0 + 2.0 * X[:, 0] - 0.5 * X[:, 1]
    h = np.array([0.2, 0.2])
    est = init_parametric(DataBlock(1, X, Y), "gaussian-identity", grid2, h)
    Z = np.column_stack([np.ones(80), X])
    resid = Y - est.predict(grid2, X)
    assert np.abs(Z.T @ resid).max() <= 1e-10
    assert np.allclose(est.beta1, h[:, None] * np.array([[2.0], [-0.5]]))


def test_init_poisson_constant(rng, grid2):
    X = rng.uniform(size=(50, 2))
    est = init_parametric(DataBlock(1, X, np.ones(50)), "poisson-log", grid2, [0.2, 0.2])
    assert est.intercept == pytest.approx(0.0, abs=1e-12)
    assert np.abs(est.components).max() <= 1e-12 and np.abs(est.beta1).max() <= 1e-12


def test_init_fallback(grid2):
    block = DataBlock(1, np.array([[0.2, 0.3], [0.5, 0.5]]), np.array([1.0, 2.0]))
    with pytest.warns(InitWarning):
        est = init_parametric(block, "poisson-log", grid2, [0.2, 0.2])
    assert est.intercept == 0 and not est.components.any()


def _system(rng, grid, family="poisson-log", n=200, h=(0.2, 0.2)):
    block = make_block(rng, n, family=family)
    h = np.array(h)
    beta = init_parametric(block, family, grid, h)
    cur = build_block_matrices(block, beta, h, grid, family, third=False)
    return block, beta, cur, h


def test_assemble_first_block_is_batch(rng, grid2):
    block, beta, cur, h = _system(rng, grid2)
    sys_ = assemble_system(None, cur, beta, 1.0, grid2)
    assert np.array_equal(sys_.jac, cur.V) and np.array_equal(sys_.score, cur.U[0])


def test_assemble_gaussian_no_third_order(rng, grid2):
    old = make_block(rng, 100, family="gaussian-identity")
    h = np.array([0.2, 0.2])
    btil = init_parametric(old, "gaussian-identity", grid2, h)
    stored = merge_statistics(None, build_sub_statistics(old, btil, h, grid2, "gaussian-identity"), 1.0)
    block, beta, cur, _ = _system(rng, grid2, "gaussian-identity")
    sys_ = assemble_system(stored, cur, beta, 0.4, grid2)
    assert np.allclose(sys_.jac, 0.4 * cur.V + 0.6 * stored.V, rtol=0, atol=1e-14)


def test_assemble_at_stored_point(rng, grid2):
    old = make_block(rng, 100)
    h = np.array([0.2, 0.2])
    btil = init_parametric(old, "poisson-log", grid2, h)
    sub = build_sub_statistics(old, btil, h, grid2, "poisson-log")
    stored = merge_statistics(None, sub, 1.0)
    b = btil.local_vector(grid2)
    assert np.allclose(np.einsum("rc...,c...->r...", stored.V, b) - stored.Vb, 0, atol=1e-13)
    cur = build_block_matrices(make_block(rng, 50), btil, h, grid2, "poisson-log", third=False)
    sys_ = assemble_system(stored, cur, btil, 1 / 3, grid2)
    assert np.allclose(sys_.score, cur.U[0] / 3 + 2 / 3 * stored.U[0], atol=1e-13)
    assert np.allclose(sys_.jac, cur.V / 3 + 2 / 3 * stored.V, atol=1e-13)


def test_xi0_is_mean_response_for_gaussian_at_zero():
    grid = GridSpec(21, 2)
    X = np.array([[0.1, 0.2], [0.4, 0.9], [0.5, 0.5], [0.8, 0.3], [0.95, 0.6]])
    Y = np.array([1.0, -2.0, 0.5, 3.0, 0.25])
    h = np.array([0.3, 0.3])
    beta = AdditiveEstimate.zeros(grid, h)
    cur = build_block_matrices(DataBlock(1, X, Y), beta, h, grid, "gaussian-identity", third=False)
    xi0, *_ = outer_step(assemble_system(None, cur, beta, 1.0, grid), grid, SolverConfig())
    # normalised kernels integrate to one, so the ratio is the plain mean
    assert xi0 == pytest.approx(Y.mean(), abs=1e-12)


def test_d1_single_sweep_exact(rng):
    grid = GridSpec(41, 1)
    X = rng.uniform(size=(100, 1))
    block = DataBlock(1, X, rng.poisson(np.exp(1 + X[:, 0])).astype(float))
    beta = init_parametric(block, "poisson-log", grid, [0.15])
    cur = build_block_matrices(block, beta, [0.15], grid, "poisson-log", third=False)
    sys_ = assemble_system(None, cur, beta, 1.0, grid)
    xi0 = -sys_.score0 / sys_.jac00
    xi = inner_sweep(sys_, xi0, [np.zeros((2, 41))], grid)
    assert inner_residual(sys_, xi0, xi, grid) <= 1e-12


def test_zero_rhs_fixed_point(rng, grid2):
    _, beta, cur, _ = _system(rng, grid2)
    sys_ = assemble_system(None, cur, beta, 1.0, grid2)
    sys_.zeta = [np.zeros_like(z) for z in sys_.zeta]
    xi = inner_sweep(sys_, 0.0, [np.zeros((2, grid2.points))] * 2, grid2)
    assert all(not x.any() for x in xi)


def test_product_design_two_sweeps():
    # lattice design: the empirical covariate law is an exact product
    grid = GridSpec(21, 2)
    u = np.linspace(0.0, 1.0, 60)
    X = np.array([(a, b) for a in u for b in u])
    rng = np.random.default_rng(5)
    Y = np.sin(2 * np.pi * X[:, 0]) + X[:, 1] ** 2 + rng.normal(0, 0.2, len(X))
    h = np.array([0.2, 0.2])
    block = DataBlock(1, X, Y)
    beta = init_parametric(block, "gaussian-identity", grid, h)
    cur = build_block_matrices(block, beta, h, grid, "gaussian-identity", third=False)
    sys_ = assemble_system(None, cur, beta, 1.0, grid)
    cfg = SolverConfig(eps_inner=1e-8)
    _, _, sweeps, _, _ = outer_step(sys_, grid, cfg)
    assert sweeps <= 2


def test_inner_residual_non_increasing():
    grid = GridSpec(41, 2)
    cfg = SolverConfig(track_residuals=True)
    for block in simulate(11, 3):
        h = np.array([0.12, 0.12])
        beta = init_parametric(block, "poisson-log", grid, h)
        cur = build_block_matrices(block, beta, h, grid, "poisson-log", third=False)
        *_, res = outer_step(assemble_system(None, cur, beta, 1.0, grid), grid, cfg)
        assert all(b <= a * (1 + 1e-9) + 1e-15 for a, b in zip(res[1:], res[2:]))


def test_constraint_update_properties(rng, grid2):
    block, beta, cur, h = _system(rng, grid2)
    sys_ = assemble_system(None, cur, beta, 1.0, grid2)
    xi0, xi, *_ = outer_step(sys_, grid2, SolverConfig())
    new = apply_constraint_update(beta, xi0, xi, sys_, grid2)
    assert np.abs(constraint_values(new, sys_.V, grid2)).max() <= 1e-8
    # zero increments leave an already centred estimate unchanged
    same = apply_constraint_update(new, 0.0, [np.zeros_like(x) for x in xi], sys_, grid2)
    assert same.sup_distance(new) <= 1e-12
    # re-centring only moves constants: the local intercept field is unchanged
    raw = beta.raw_coefficients() + np.stack(xi)
    uncentred = AdditiveEstimate.from_raw(beta.intercept + xi0, raw, h)
    assert np.allclose(uncentred.local_vector(grid2), new.local_vector(grid2), atol=1e-12)


def test_fixed_point_has_zero_step(rng, grid2):
    block = make_block(rng, 300)
    h = np.array([0.2, 0.2])
    est, info = batch_fit(block, h, grid2, "poisson-log")
    assert info.converged and info.residual <= 1e-5
    cur = build_block_matrices(block, est, h, grid2, "poisson-log", third=False)
    sys_ = assemble_system(None, cur, est, 1.0, grid2)
    xi0, xi, *_ = outer_step(sys_, grid2, SolverConfig())
    assert abs(xi0) <= 1e-6 and max(np.abs(x).max() for x in xi) <= 1e-6


def test_first_block_equals_batch(grid2):
    block = next(iter(simulate(2, 1)))
    h = np.array([0.15, 0.15])
    st = StreamState(grid2, "poisson-log", "epanechnikov", L=5)
    st, diag, _ = process_block(st, block, h)
    est, _ = batch_fit(block, h, grid2, "poisson-log")
    assert st.estimate.sup_distance(est) <= 1e-6
    assert len(st.sets) == 5 and diag.converged


def test_gaussian_online_equals_batch(rng, grid2):
    h = np.array([0.2, 0.2])
    blocks = [make_block(rng, 40, family="gaussian-identity", index=k) for k in range(1, 7)]
    st = StreamState(grid2, "gaussian-identity", "epanechnikov", L=3)
    for b in blocks:
        st, diag, _ = process_block(st, b, h)
    est, _ = batch_fit(blocks, h, grid2, "gaussian-identity")
    assert st.estimate.sup_distance(est) <= 1e-6


def test_stationarity_and_constraint_every_block(rng, grid2):
    st = StreamState(grid2, "poisson-log", "epanechnikov", L=4)
    cfg = SolverConfig()
    for k, h in enumerate([0.25, 0.22, 0.2, 0.18, 0.17], start=1):
        st, diag, _ = process_block(st, make_block(rng, 80, index=k), [h, h], cfg)
        assert diag.residual <= 10 * cfg.eps_outer
        V = st.sets[0].V
        assert np.abs(constraint_values(st.estimate, V, grid2)).max() <= 1e-8


def test_determinism(grid2):
    def run():
        st = StreamState(grid2, "poisson-log", "epanechnikov", L=3)
        for b in simulate(9, 4):
            st, _, _ = process_block(st, b, [0.2, 0.18])
        return st.estimate
    a, b = run(), run()
    assert a.sup_distance(b) == 0.0


def test_batch_d1_matches_local_linear(rng):
    grid = GridSpec(41, 1)
    X = rng.uniform(size=(150, 1))
    Y = np.sin(3 * X[:, 0]) + rng.normal(0, 0.1, 150)
    h = 0.12
    est, _ = batch_fit(DataBlock(1, X, Y), [h], grid, "gaussian-identity")
    K = kernel_weights(grid, X[:, 0], h)
    for k, x in enumerate(grid.nodes):
        w = K[:, k]
        Z = np.column_stack([np.ones(150), X[:, 0] - x])
        coef = np.linalg.solve(Z.T @ (w[:, None] * Z), Z.T @ (w * Y))
        assert est.intercept + est.components[0, k] == pytest.approx(coef[0], abs=1e-8)
        assert est.beta1[0, k] == pytest.approx(h * coef[1], abs=1e-8)


def test_batch_permutation_invariant(rng, grid2):
    block = make_block(rng, 120)
    p = rng.permutation(120)
    h = np.array([0.2, 0.25])
    a, _ = batch_fit(block, h, grid2, "poisson-log")
    b, _ = batch_fit(DataBlock(1, block.X[p], block.Y[p]), h, grid2, "poisson-log")
    assert a.sup_distance(b) <= 1e-12


def test_batch_error_decreases_with_n():
    grid = GridSpec(41, 2)
    blocks = list(simulate(21, 100))
    truth = centred_component(0, grid.nodes)
    errs = []
    for K in (5, 100):
        N = sum(b.n for b in blocks[:K])
        h = np.full(2, 0.6 * N ** -0.2)
        est, _ = batch_fit(blocks[:K], h, grid, "poisson-log")
        c = est.components[0] - est.components[0] @ grid.weights
        inner = (grid.nodes > 0.1) & (grid.nodes < 0.9)
        errs.append(np.abs(c - truth)[inner].max())
    assert errs[1] < errs[0]


def test_centering_uses_supplied_v(rng, grid2):
    block, beta, cur, h = _system(rng, grid2)
    out = center_components(beta, cur.V, grid2)
    assert np.abs(constraint_values(out, cur.V, grid2)).max() <= 1e-10
    assert out.intercept + out.components.sum(axis=0).mean() == pytest.approx(
        beta.intercept + beta.components.sum(axis=0).mean())

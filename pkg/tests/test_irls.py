import logging

import numpy as np
import pytest

from cellpca.initializer import initial_fit, initial_scales
from cellpca.irls import fit, robust_inner_scores, robust_scores_batch, solve_psd_batched, zero_weight_columns
from cellpca.kernels import quadratic_kernel, tanh_kernel
from cellpca.models import MaskedMatrix, ScalePack
from cellpca.schemas import InitConfig, IrlsOptions
from cellpca.simulation import a09_covariance, contaminate, gen_a09, subspace_angle, true_subspace
from cellpca.utils import random_orthogonal

from conftest import low_rank


def test_solve_psd_batched_handles_singular_systems():
    A = np.array([[[2.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]])
    b = np.array([[4.0, 0.0], [1.0, 1.0]])
    x = solve_psd_batched(A, b)
    assert np.allclose(x[0], [2.0, 0.0])
    assert np.all(x[1] == 0.0)


@pytest.mark.parametrize("q", [1, 2, 3])
def test_quadratic_kernels_reproduce_classical_pca(q):
    X, _, _ = low_rank(100, 20, q, seed=10 + q)
    opts = IrlsOptions(kernel1=quadratic_kernel(), kernel2=quadratic_kernel(), max_iter=500, rel_tol=1e-15)
    result = fit(MaskedMatrix.from_array(X), q, opts)
    centered = X - X.mean(axis=0)
    _, _, right_t = np.linalg.svd(centered, full_matrices=False)
    assert subspace_angle(result.V, right_t[:q].T) < 1e-6


SCHEMES = {"cellwise": (6.0, 0.0), "rowwise": (0.0, 6.0), "mixed": (4.0, None)}


@pytest.mark.parametrize("seed", range(200))
def test_objective_trace_never_increases(seed):
    scheme = list(SCHEMES)[seed % 3]
    gamma_c, gamma_r = SCHEMES[scheme]
    p = 8 + seed % 5
    data, _ = contaminate(gen_a09(50, p, seed), a09_covariance(p), scheme, gamma_c, gamma_r, 0.2, seed + 1000)
    if seed % 4 == 0:
        data[np.random.default_rng(seed).random(data.shape) < 0.05] = np.nan
    result = fit(MaskedMatrix.from_array(data), 2)
    trace = np.array(result.objective_trace)
    assert np.all(np.diff(trace) <= 1e-10 * trace[0])


def test_fit_is_translation_equivariant(contaminated_data):
    X, _, _ = contaminated_data
    shift = np.linspace(-3.0, 5.0, X.p)
    opts = IrlsOptions(max_iter=30, rel_tol=1e-300)
    base = fit(X, 2, opts)
    moved = fit(MaskedMatrix.from_array(X.to_array() + shift), 2, opts)
    assert subspace_angle(moved.V, base.V) < 1e-8
    assert np.allclose(moved.mu, base.mu + shift, atol=1e-8)
    assert np.allclose(moved.fitted() - shift, base.fitted(), atol=1e-8)
    assert np.allclose(moved.weights.W, base.weights.W, atol=1e-8)


def test_starting_basis_rotation_leaves_projection_unchanged(contaminated_data):
    X, _, _ = contaminated_data
    V0, U0, mu0 = initial_fit(X, InitConfig(q=2))
    # fixed iteration count so both runs stop at the same step
    opts = IrlsOptions(max_iter=40, rel_tol=1e-300)
    scales = initial_scales(X, V0, U0, mu0, opts.kernel1)
    base = fit(X, 2, opts, start=(V0, U0, mu0), scales=scales)
    rng = np.random.default_rng(0)
    for _ in range(5):
        O = random_orthogonal(2, rng)
        other = fit(X, 2, opts, start=(V0 @ O, U0 @ O, mu0), scales=scales)
        assert np.linalg.norm(other.P - base.P) < 1e-8
        assert np.allclose(other.fitted(), base.fitted(), atol=1e-8)


def test_first_order_conditions_at_convergence(contaminated_data):
    X, _, _ = contaminated_data
    result = fit(X, 2, IrlsOptions(max_iter=2000, rel_tol=1e-15))
    R = np.where(X.mask, X.values - result.fitted(), 0.0)
    W, Wc = result.weights.W, result.weights.Wc
    scale = np.abs(R).max() * (np.abs(result.U).max() + np.abs(result.V).max())
    loadings = np.einsum("ij,ij,ik->jk", W, R, result.U)
    scores = np.einsum("ij,ij,jk->ik", Wc, R, result.V)
    center = (W * R).sum(axis=0)
    assert np.abs(loadings).max() / (scale * X.n) < 1e-6
    assert np.abs(scores).max() / (scale * X.p) < 1e-6
    assert np.abs(center).max() / (np.abs(R).max() * X.n) < 1e-6


def test_cellwise_outliers_get_zero_weight(contaminated_data):
    X, V, idx = contaminated_data
    result = fit(X, 2)
    assert np.mean(result.weights.Wc.flat[idx] == 0.0) > 0.9
    assert subspace_angle(result.V, V) < 0.1


def test_zero_weight_guard_keeps_previous_state(contaminated_data, caplog):
    X, _, _ = contaminated_data
    with caplog.at_level(logging.WARNING):
        result = fit(X, 2, IrlsOptions(zero_weight_cap=1e-9))
    assert result.iterations == 0
    assert len(result.objective_trace) == 1
    assert not result.converged
    assert "zero" in caplog.text.lower()


def test_zero_weight_columns_counts_observed_cells_only():
    mask = np.array([[True, True], [True, False], [True, False], [True, True]])
    W = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
    assert zero_weight_columns(mask, W, 0.25).tolist() == [1]
    assert zero_weight_columns(mask, W, 0.5).tolist() == []


def test_robust_scores_ignore_an_outlying_cell():
    rng = np.random.default_rng(3)
    V, _ = np.linalg.qr(rng.standard_normal((8, 2)))
    u = np.array([2.0, -1.0])
    x = V @ u + 0.01 * rng.standard_normal(8)
    x[3] += 50.0
    mask = np.ones((1, 8), dtype=bool)
    U, Wc, ok = robust_scores_batch(x[None, :], mask, V, np.zeros(8), np.full(8, 0.05), tanh_kernel())
    assert ok[0]
    assert Wc[0, 3] == 0.0
    assert np.allclose(U[0], u, atol=0.05)


def test_robust_scores_flag_rows_without_data():
    V = np.eye(3)[:, :1]
    values = np.array([[1.0, 2.0, 3.0], [np.nan, np.nan, np.nan]])
    U, Wc, ok = robust_scores_batch(values, np.isfinite(values), V, np.zeros(3), np.ones(3), quadratic_kernel())
    assert ok.tolist() == [True, False]
    assert np.all(np.isnan(U[1]))


def test_robust_inner_scores_for_one_row():
    V = np.eye(4)[:, :2]
    x = np.array([1.0, -2.0, 0.0, 0.0])
    scales = ScalePack(np.ones(4), 1.0)
    u, w = robust_inner_scores(x, np.ones(4, dtype=bool), V, np.zeros(4), scales, tanh_kernel())
    assert np.allclose(u, [1.0, -2.0], atol=1e-8)
    assert np.allclose(w, 1.0)
    u, _ = robust_inner_scores(x, np.zeros(4, dtype=bool), V, np.zeros(4), scales, tanh_kernel())
    assert u is None


def test_shifted_rows_are_downweighted():
    Sigma = a09_covariance(20)
    data, truth = contaminate(gen_a09(100, 20, seed=31), Sigma, "rowwise", 0.0, 9.0, 0.2, seed=32)
    result = fit(MaskedMatrix.from_array(data), 2)
    wr = result.weights.wr
    assert np.median(wr[~truth.rows]) == 1.0
    assert np.median(wr[truth.rows]) < 0.95
    # most of the shifted rows' mass is removed through their cells
    assert result.weights.W[truth.rows].mean() < 0.5 * result.weights.W[~truth.rows].mean()
    assert subspace_angle(result.V, true_subspace(Sigma, 2)) < 0.5

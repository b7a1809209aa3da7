from dataclasses import replace

import numpy as np
import pytest

from cellpca.errors import DegenerateScatter, InputError
from cellpca.fit_service import fit_cellpca
from cellpca.irls import fit
from cellpca.models import MaskedMatrix
from cellpca.postprocess import finalize, orthonormalize, robust_scores_shape, select_rank
from cellpca.simulation import gen_a09

from conftest import low_rank


def test_orthonormalize_keeps_the_fitted_matrix():
    rng = np.random.default_rng(0)
    V = rng.standard_normal((6, 2))
    U = rng.standard_normal((20, 2))
    Vt, Ut, _ = orthonormalize(V, U, np.zeros(6))
    assert np.allclose(Vt.T @ Vt, np.eye(2))
    assert np.allclose(Ut @ Vt.T, U @ V.T)


def test_robust_scores_shape_resists_outlying_scores():
    rng = np.random.default_rng(1)
    scores = rng.standard_normal((400, 2)) * np.array([3.0, 1.0])
    scores[:40] = [40.0, -30.0]
    center, cov = robust_scores_shape(scores)
    assert np.all(np.abs(center) < 0.4)
    assert cov[0, 0] == pytest.approx(9.0, rel=0.3)
    assert cov[1, 1] == pytest.approx(1.0, rel=0.3)


def test_robust_scores_shape_is_deterministic():
    scores = np.random.default_rng(2).standard_normal((50, 2))
    a = robust_scores_shape(scores)
    b = robust_scores_shape(scores)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_constant_score_coordinate_is_degenerate():
    scores = np.column_stack([np.arange(30.0), np.ones(30)])
    with pytest.raises(DegenerateScatter):
        robust_scores_shape(scores)


def test_finalize_rotates_without_changing_the_fit(contaminated_data):
    X, _, _ = contaminated_data
    raw = fit(X, 2)
    V, U, mu = orthonormalize(raw.V, raw.U, raw.mu)
    base = replace(raw, V=V, U=U, mu=mu)
    mu_U, Sigma_U = robust_scores_shape(U)
    final = finalize(base, U, mu_U, Sigma_U)
    assert np.allclose(final.fitted(), base.fitted())
    assert np.allclose(final.V.T @ final.V, np.eye(2))
    assert final.eigenvalues[0] >= final.eigenvalues[1] > 0
    # robust scores are centered at the robust location
    assert np.allclose(np.median(final.U, axis=0), 0.0, atol=0.5)


def test_fit_cellpca_returns_eigenvalues(clean_data):
    X, V = clean_data
    result = fit_cellpca(X, 2)
    assert result.eigenvalues.shape == (2,)
    # score spreads are 5 and 4
    assert result.eigenvalues[0] == pytest.approx(25.0, rel=0.5)


def test_select_rank_on_exact_rank_two_data():
    X, _, _ = low_rank(60, 8, 2, seed=3, noise=0.0, spreads=(1.0, 1.0))
    curve = select_rank(MaskedMatrix.from_array(X), 2)
    assert curve.explained[1] == pytest.approx(1.0, abs=1e-6)
    assert curve.selected == 2
    assert curve.nu0 > 0


def test_select_rank_checks_range(clean_data):
    X, _ = clean_data
    with pytest.raises(InputError):
        select_rank(X, 8)


def test_select_rank_finds_the_rank_behind_a_clear_gap():
    X, _, _ = low_rank(100, 10, 2, seed=41, noise=0.3)
    curve = select_rank(MaskedMatrix.from_array(X), 3)
    assert curve.explained[0] < 0.8 <= curve.explained[1]
    assert curve.selected == 2


@pytest.mark.parametrize("seed", range(4))
def test_rank_objective_never_grows_with_the_rank(seed):
    curve = select_rank(MaskedMatrix.from_array(gen_a09(100, 20, seed)), 4)
    assert all(b <= a + 1e-8 * curve.nu0 for a, b in zip(curve.nu, curve.nu[1:]))
    assert all(e <= 1.0 for e in curve.explained)

import math

import numpy as np
import pytest

from cellpca.errors import DimensionMismatch
from cellpca.kernels import quadratic_kernel, tanh_kernel
from cellpca.models import MaskedMatrix, ScalePack, SubspaceFit, WeightState
from cellpca.objective import (
    cell_residuals,
    compute_weights,
    evaluate_objective,
    residual_matrix,
    row_total_deviation,
)
from cellpca.utils import random_orthogonal


def _exact(seed=0, n=12, p=4, q=2):
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((p, q))
    U = rng.standard_normal((n, q))
    mu = rng.standard_normal(p)
    return U @ V.T + mu, V, U, mu


def test_objective_zero_for_exact_fit():
    X, V, U, mu = _exact()
    scales = ScalePack(np.ones(4), 1.0)
    k = tanh_kernel()
    assert evaluate_objective(MaskedMatrix.from_array(X), V, U, mu, scales, k, k) == pytest.approx(0.0, abs=1e-24)


def test_objective_invariant_to_rotating_the_scores():
    X, V, U, mu = _exact(seed=1)
    rng = np.random.default_rng(2)
    Xn = MaskedMatrix.from_array(X + rng.standard_normal(X.shape))
    O = random_orthogonal(2, rng)
    scales = ScalePack(np.ones(4), 1.0)
    k = tanh_kernel()
    a = evaluate_objective(Xn, V, U, mu, scales, k, k)
    b = evaluate_objective(Xn, V @ O, U @ O, mu, scales, k, k)
    assert b == pytest.approx(a, rel=1e-12)


def test_residuals_are_zero_on_missing_cells():
    X, V, U, mu = _exact()
    X[0, 1] = np.nan
    R = residual_matrix(MaskedMatrix.from_array(X + 1.0), V, U, mu)
    assert R[0, 1] == 0.0
    assert R[0, 0] == pytest.approx(1.0)


def test_residuals_check_shapes():
    X, V, U, mu = _exact()
    with pytest.raises(DimensionMismatch):
        residual_matrix(MaskedMatrix.from_array(X), V[:3], U, mu)


def test_cell_residuals_mark_missing_cells():
    X, V, U, mu = _exact()
    X[2, 3] = np.nan
    ones = np.ones((12, 4))
    fit = SubspaceFit(V=V, U=U, mu=mu, scales=ScalePack(np.ones(4), 1.0), weights=WeightState(ones, np.ones(12), ones))
    R = cell_residuals(MaskedMatrix.from_array(X + 0.5), fit)
    assert np.isnan(R[2, 3])
    assert np.nanmax(np.abs(R - 0.5)) < 1e-12


def test_total_deviation_in_quadratic_region():
    r = np.array([0.5, -1.0, 0.2])
    scales = ScalePack(np.ones(3), 1.0)
    expected = math.sqrt(np.mean(r ** 2 / 2))
    assert row_total_deviation(r, np.ones(3, dtype=bool), scales, tanh_kernel()) == pytest.approx(expected)


def test_total_deviation_skips_missing_cells():
    r = np.array([0.5, 100.0, 0.2])
    mask = np.array([True, False, True])
    scales = ScalePack(np.ones(3), 1.0)
    expected = math.sqrt((0.25 + 0.04) / 4)
    assert row_total_deviation(r, mask, scales, tanh_kernel()) == pytest.approx(expected)


def test_weights_reject_large_cells_and_far_rows():
    R = np.zeros((3, 4))
    R[0, 2] = 10.0
    R[1] = 50.0
    mask = np.ones_like(R, dtype=bool)
    mask[2, 3] = False
    scales = ScalePack(np.ones(4), 0.4)
    w = compute_weights(R, mask, scales, tanh_kernel(), tanh_kernel())
    assert w.Wc[0, 2] == 0.0
    assert w.Wc[0, 0] == 1.0
    assert w.Wc[2, 3] == 0.0
    # every cell of row 1 sits on the plateau: RT / sigma2 = sqrt(d) / 0.4 > c
    assert w.wr[1] == 0.0
    assert np.allclose(w.W, w.Wc * w.wr[:, None])


def test_quadratic_kernels_give_unit_weights():
    R = np.random.default_rng(0).standard_normal((5, 3)) * 10
    mask = np.ones_like(R, dtype=bool)
    w = compute_weights(R, mask, ScalePack(np.ones(3), 1.0), quadratic_kernel(), quadratic_kernel())
    assert np.all(w.W == 1.0)

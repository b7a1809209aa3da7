"""
Objective Module
Cellwise residuals, rowwise total deviations, the robust objective and the IRLS weights.
"""

import math

import numpy as np
from numpy.typing import NDArray

from .errors import DimensionMismatch, EmptyRow
from .kernels import RhoKernel, rho, weight
from .models import MaskedMatrix, ScalePack, SubspaceFit, WeightState


def residual_matrix(X: MaskedMatrix, V: NDArray, U: NDArray, mu: NDArray) -> NDArray:
    """x - U V^T - mu on observed cells, 0 on missing cells."""
    if V.shape[0] != X.p or U.shape[0] != X.n or U.shape[1] != V.shape[1] or mu.shape != (X.p,):
        raise DimensionMismatch(
            f"data {X.values.shape} does not match V {V.shape}, U {U.shape}, mu {mu.shape}"
        )
    return np.where(X.mask, X.values - U @ V.T - mu, 0.0)


def cell_residuals(X: MaskedMatrix, fit: SubspaceFit) -> NDArray:
    """Cellwise residuals of a fit, NaN where the cell is missing."""
    R = residual_matrix(X, fit.V, fit.U, fit.mu)
    return np.where(X.mask, R, np.nan)


def row_total_deviations(
    residuals: NDArray, mask: NDArray, sigma1: NDArray, kernel1: RhoKernel
) -> NDArray:
    """Vectorised RT_i = sqrt(mean over observed j of sigma1_j^2 rho1(r_ij / sigma1_j))."""
    mask = np.asarray(mask, dtype=bool)
    counts = mask.sum(axis=-1)
    if np.any(counts == 0):
        raise EmptyRow("total deviation needs at least one observed cell per row")
    r = np.where(mask, residuals, 0.0)
    terms = np.where(mask, sigma1 ** 2 * rho(kernel1, r / sigma1), 0.0)
    return np.sqrt(np.maximum(terms.sum(axis=-1) / counts, 0.0))


def row_total_deviation(
    residual_row: NDArray, mask_row: NDArray, scales: ScalePack, kernel1: RhoKernel
) -> float:
    """Rowwise total deviation of a single row."""
    rt = row_total_deviations(
        np.asarray(residual_row, dtype=float)[None, :],
        np.asarray(mask_row, dtype=bool)[None, :],
        scales.sigma1,
        kernel1,
    )
    return float(rt[0])


def objective_from_residuals(
    residuals: NDArray, mask: NDArray, scales: ScalePack, kernel1: RhoKernel, kernel2: RhoKernel
) -> float:
    counts = mask.sum(axis=1)
    rt = row_total_deviations(residuals, mask, scales.sigma1, kernel1)
    terms = counts * rho(kernel2, rt / scales.sigma2)
    return scales.sigma2 ** 2 / counts.sum() * math.fsum(terms)


def evaluate_objective(
    X: MaskedMatrix,
    V: NDArray,
    U: NDArray,
    mu: NDArray,
    scales: ScalePack,
    kernel1: RhoKernel,
    kernel2: RhoKernel,
) -> float:
    """
    Robust objective (sigma2^2 / m) * sum_i m_i rho2(RT_i / sigma2).

    Zero exactly when the fit reproduces every observed cell.
    """
    R = residual_matrix(X, V, U, mu)
    return objective_from_residuals(R, X.mask, scales, kernel1, kernel2)


def compute_weights(
    residuals: NDArray,
    mask: NDArray,
    scales: ScalePack,
    kernel1: RhoKernel,
    kernel2: RhoKernel,
) -> WeightState:
    """Cell weights w1(r / sigma1), row weights w2(RT / sigma2) and their masked product."""
    mask = np.asarray(mask, dtype=bool)
    if residuals.shape != mask.shape or residuals.shape[-1] != scales.sigma1.size:
        raise DimensionMismatch("residuals, mask and scales disagree")
    r = np.where(mask, residuals, 0.0)
    Wc = np.where(mask, weight(kernel1, r / scales.sigma1), 0.0)
    rt = row_total_deviations(r, mask, scales.sigma1, kernel1)
    wr = np.asarray(weight(kernel2, rt / scales.sigma2), dtype=float)
    return WeightState(Wc=Wc, wr=wr, W=Wc * wr[:, None])

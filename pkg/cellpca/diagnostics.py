"""
Diagnostics Module
Standardized residuals, residual cellmap categories, outlier-map statistics with
their cutoffs, imputation of flagged cells and out-of-sample prediction.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from .errors import DimensionMismatch, ZeroEigenvalue
from .irls import robust_scores_batch
from .kernels import column_mscales
from .models import MaskedMatrix, SubspaceFit
from .objective import cell_residuals
from .utils import chi2_quantile

logger = logging.getLogger(__name__)

CELL_CUTOFF = math.sqrt(chi2_quantile(0.99, 1))  # 2.576
CELL_SATURATION = 6.0
MAP_QUANTILE = 0.99


class CellCategory(str, Enum):
    REGULAR = "regular"
    MISSING = "missing"
    POSITIVE = "positive-outlier"
    NEGATIVE = "negative-outlier"


class OutlierClass(str, Enum):
    REGULAR = "regular"
    GOOD_LEVERAGE = "good-leverage"
    ORTHOGONAL = "orthogonal-outlier"
    BAD_LEVERAGE = "bad-leverage"


@dataclass(frozen=True)
class CellmapGrid:
    residuals: NDArray
    category: NDArray  # CellCategory values as strings
    intensity: NDArray
    row_shade: NDArray


@dataclass(frozen=True)
class OutlierMapRecord:
    index: int
    score_distance: float
    residual_norm: float
    row_weight: float
    point_size: float
    cutoff_sd: float
    cutoff_res: float
    label: OutlierClass


@dataclass(frozen=True)
class PredictionResult:
    scores: Optional[NDArray]
    fitted: Optional[NDArray]
    imputed: Optional[NDArray]
    cell_weights: NDArray

    @property
    def available(self) -> bool:
        return self.scores is not None


def standardize_columns(R: NDArray, mask: NDArray) -> Tuple[NDArray, NDArray]:
    """Divide each residual column by its M-scale; NaN on missing cells."""
    scales, flags = column_mscales(np.where(mask, R, 0.0), mask)
    return np.where(mask, R / scales, np.nan), flags


def standardized_residuals(X: MaskedMatrix, fit: SubspaceFit) -> NDArray:
    """Residuals of the final fit, each column scaled by its biweight M-scale."""
    if fit.U.shape[0] != X.n or fit.V.shape[0] != X.p:
        raise DimensionMismatch("fit was not computed on this data")
    std, _ = standardize_columns(cell_residuals(X, fit), X.mask)
    return std


def cellmap(std_res: NDArray, mask: NDArray, wr: NDArray) -> CellmapGrid:
    """Cell categories with a linear intensity ramp between the cutoff and saturation."""
    mask = np.asarray(mask, dtype=bool)
    r = np.where(mask, std_res, 0.0)
    category = np.full(r.shape, CellCategory.REGULAR.value, dtype=object)
    outlying = mask & (np.abs(r) >= CELL_CUTOFF)
    category[outlying & (r > 0)] = CellCategory.POSITIVE.value
    category[outlying & (r < 0)] = CellCategory.NEGATIVE.value
    category[~mask] = CellCategory.MISSING.value
    ramp = np.clip((np.abs(r) - CELL_CUTOFF) / (CELL_SATURATION - CELL_CUTOFF), 0.0, 1.0)
    return CellmapGrid(
        residuals=np.where(mask, std_res, np.nan),
        category=category,
        intensity=np.where(outlying, ramp, 0.0),
        row_shade=1.0 - np.asarray(wr, dtype=float),
    )


def score_distance(scores: NDArray, eigenvalues: NDArray) -> float | NDArray:
    """sqrt(sum_l u_l^2 / lambda_l), for one score vector or a stack of them."""
    eigenvalues = np.asarray(eigenvalues, dtype=float)
    if np.any(eigenvalues <= 0):
        raise ZeroEigenvalue(f"eigenvalues must be positive, got {eigenvalues.tolist()}")
    u = np.asarray(scores, dtype=float)
    sd = np.sqrt(np.sum(u * u / eigenvalues, axis=-1))
    return float(sd) if u.ndim == 1 else sd


def residual_cutoff(fit: SubspaceFit, n_sim: int, seed: int, n_rows: Optional[int] = None) -> float:
    """
    0.99 quantile of standardized residual norms on clean data simulated from the fit.

    Each replicate draws scores from N(0, diag(eigenvalues)) and per-column noise
    N(0, sigma1_j^2) projected off the subspace, then repeats the residual pipeline
    (robust scores, residuals, columnwise M-scale standardization).
    """
    V, mu, sigma1 = fit.V, fit.mu, fit.scales.sigma1
    lam = np.zeros(fit.q) if fit.eigenvalues is None else np.asarray(fit.eigenvalues)
    n = n_rows or max(fit.U.shape[0], 50)
    norms = []
    for child in np.random.SeedSequence(seed).spawn(n_sim):
        rng = np.random.default_rng(child)
        scores = rng.standard_normal((n, fit.q)) * np.sqrt(lam)
        noise = rng.standard_normal((n, V.shape[0])) * sigma1
        noise -= (noise @ V) @ V.T
        x = mu + scores @ V.T + noise
        mask = np.ones_like(x, dtype=bool)
        U, _, ok = robust_scores_batch(x, mask, V, mu, sigma1, fit.kernel1)
        R = x - mu - np.where(ok[:, None], U, 0.0) @ V.T
        std, _ = standardize_columns(R, mask)
        norms.append(np.linalg.norm(std, axis=1))
    cutoff = float(np.quantile(np.concatenate(norms), MAP_QUANTILE))
    logger.info(f"📝 Residual cutoff {cutoff:.4f} from {n_sim} simulated datasets")
    return cutoff


def classify(sd: float, res: float, c_sd: float, c_r: float) -> OutlierClass:
    far, off = sd > c_sd, res > c_r
    if far and off:
        return OutlierClass.BAD_LEVERAGE
    if far:
        return OutlierClass.GOOD_LEVERAGE
    if off:
        return OutlierClass.ORTHOGONAL
    return OutlierClass.REGULAR


def outlier_map(
    X: MaskedMatrix, fit: SubspaceFit, c_r: float, std_res: Optional[NDArray] = None
) -> List[OutlierMapRecord]:
    """
    Score distance against standardized residual norm for every case.

    Scores are the fitted scores, which equal V^T (x_imp - mu) for the imputed rows.
    """
    if std_res is None:
        std_res = standardized_residuals(X, fit)
    c_sd = math.sqrt(chi2_quantile(MAP_QUANTILE, fit.q))
    sd = score_distance(fit.U, fit.eigenvalues)
    res = np.linalg.norm(np.nan_to_num(std_res), axis=1)
    size = 1.0 - (X.mask * fit.weights.Wc).sum(axis=1) / X.p
    return [
        OutlierMapRecord(
            index=i,
            score_distance=float(sd[i]),
            residual_norm=float(res[i]),
            row_weight=float(fit.weights.wr[i]),
            point_size=float(size[i]),
            cutoff_sd=c_sd,
            cutoff_res=c_r,
            label=classify(sd[i], res[i], c_sd, c_r),
        )
        for i in range(X.n)
    ]


def impute_row(x: NDArray, mask: NDArray, fitted: NDArray, cell_weights: NDArray) -> NDArray:
    """x_imp = x_hat + W (x - x_hat); missing cells take the fitted value."""
    w = np.where(mask, cell_weights, 0.0)
    return fitted + w * (np.where(mask, x, fitted) - fitted)


def impute(X: MaskedMatrix, fit: SubspaceFit) -> NDArray:
    """Impute the training rows with the fitted values and final cell weights."""
    return impute_row(X.values, X.mask, fit.fitted(), fit.weights.Wc)


def predict_many(values: NDArray, mask: NDArray, fit: SubspaceFit) -> List[PredictionResult]:
    """Predict new rows; rows without observed cells or with all weights zero come back empty."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    mask = np.atleast_2d(np.asarray(mask, dtype=bool)) & np.isfinite(values)
    if values.shape[1] != fit.V.shape[0]:
        raise DimensionMismatch(f"rows have {values.shape[1]} entries, fit has {fit.V.shape[0]}")
    U, Wc, ok = robust_scores_batch(values, mask, fit.V, fit.mu, fit.scales.sigma1, fit.kernel1)
    results = []
    for i in range(values.shape[0]):
        if not ok[i]:
            results.append(PredictionResult(None, None, None, Wc[i]))
            continue
        fitted = fit.V @ U[i] + fit.mu
        imputed = impute_row(values[i], mask[i], fitted, Wc[i])
        results.append(PredictionResult(U[i], fitted, imputed, Wc[i]))
    missing = int((~ok).sum())
    if missing:
        logger.warning(f"⚠️ {missing} rows could not be predicted")
    return results


def predict(x: NDArray, mask: NDArray, fit: SubspaceFit) -> PredictionResult:
    """Robust scores, fitted point and imputed point for one new row."""
    return predict_many(np.asarray(x)[None, :], np.asarray(mask)[None, :], fit)[0]

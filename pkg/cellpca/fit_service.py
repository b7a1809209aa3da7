"""
Fit Service
End-to-end fitting (IRLS, orthonormal loadings, robust principal directions)
and the diagnostics bundle used by the CLI and the HTTP routes.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from .config import settings
from .diagnostics import (
    CellmapGrid,
    OutlierMapRecord,
    cellmap,
    outlier_map,
    predict_many,
    residual_cutoff,
    standardize_columns,
)
from .irls import fit as irls_fit
from .models import MaskedMatrix, ScalePack, SubspaceFit, WeightState
from .objective import compute_weights
from .postprocess import finalize, orthonormalize, robust_scores_shape
from .schemas import InitConfig, IrlsOptions
from .utils import chi2_quantile

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DiagnosticsReport:
    standardized: NDArray
    degenerate_columns: NDArray
    grid: CellmapGrid
    records: List[OutlierMapRecord]
    cutoff_sd: float
    cutoff_res: float


def fit_cellpca(
    X: MaskedMatrix,
    q: int,
    opts: Optional[IrlsOptions] = None,
    init: Optional[InitConfig] = None,
    start: Optional[Tuple[NDArray, NDArray, NDArray]] = None,
    scales: Optional[ScalePack] = None,
) -> SubspaceFit:
    """Fit and post-process: orthonormal loadings, robust score center, principal directions."""
    raw = irls_fit(X, q, opts, init=init, start=start, scales=scales)
    V, U, mu = orthonormalize(raw.V, raw.U, raw.mu)
    mu_U, Sigma_U = robust_scores_shape(U)
    final = finalize(replace(raw, V=V, U=U, mu=mu), U, mu_U, Sigma_U)
    logger.info(f"✅ Fitted rank {q} subspace, eigenvalues {np.round(final.eigenvalues, 4).tolist()}")
    return final


def training_view(X: MaskedMatrix, fit: SubspaceFit) -> SubspaceFit:
    """
    The fit as seen on X: unchanged when X is the training data, otherwise scores and
    weights are rebuilt from out-of-sample predictions.
    """
    if fit.U.shape[0] == X.n and fit.weights.Wc.shape == X.values.shape:
        return fit
    preds = predict_many(X.values, X.mask, fit)
    U = np.array([np.zeros(fit.q) if r.scores is None else r.scores for r in preds])
    R = np.where(X.mask, X.values - U @ fit.V.T - fit.mu, 0.0)
    weights: WeightState = compute_weights(R, X.mask, fit.scales, fit.kernel1, fit.kernel2)
    return replace(fit, U=U, weights=weights)


def diagnose(X: MaskedMatrix, fit: SubspaceFit, n_sim: int = settings.CUTOFF_SIMS, seed: int = settings.SEED) -> DiagnosticsReport:
    """Standardized residuals, cellmap, cutoffs and outlier-map records for X."""
    view = training_view(X, fit)
    std, flags = standardize_columns(X.values - view.fitted(), X.mask)
    c_r = residual_cutoff(view, n_sim, seed)
    records = outlier_map(X, view, c_r, std_res=std)
    return DiagnosticsReport(
        standardized=std,
        degenerate_columns=flags,
        grid=cellmap(std, X.mask, view.weights.wr),
        records=records,
        cutoff_sd=math.sqrt(chi2_quantile(0.99, fit.q)),
        cutoff_res=c_r,
    )

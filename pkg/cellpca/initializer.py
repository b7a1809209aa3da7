"""
Initializer Module
Deterministic starting fit resistant to cellwise and rowwise outliers, and the frozen scales.

Procedure: robust column standardization by median and M-scale, univariate
flagging of large cells, then two candidate fits on the flagged copy: a
spherical PCA of the standardized rows about the columnwise median, and a
missing-data SVD of the least outlying rows. Each candidate is refined by
C-steps on orthogonal distances, the one with the smallest trimmed sum wins,
and rows below a distance cutoff are refitted together.
"""

import logging
import math
from typing import List, Optional, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy import stats

from .errors import InputError
from .kernels import RhoKernel, column_mscales, mscale_or_floor
from .models import MaskedMatrix, ScalePack
from .objective import residual_matrix, row_total_deviations
from .schemas import InitConfig
from .utils import fix_signs

logger = logging.getLogger(__name__)

MAX_DIRECTIONS = 500
C_STEP_MAX_ITER = 20
REWEIGHT_QUANTILE = 0.975


def iterative_svd(
    values: NDArray,
    mask: NDArray,
    q: int,
    max_iter: int = 50,
    tol: float = 1e-8,
) -> Tuple[NDArray, NDArray, NDArray, NDArray]:
    """
    Rank-q PCA with missing cells: alternate an SVD fit and a refill of the unobserved cells.

    Args:
        values: n x p data (unobserved entries are ignored)
        mask: Cells that take part in the fit
        q: Rank
        max_iter: Iteration cap
        tol: Relative change of the observed-cell residual sum of squares

    Returns:
        (V, U, mu, X_filled) with orthonormal V and X_filled equal to values on the mask
    """
    mask = np.asarray(mask, dtype=bool)
    counts = mask.sum(axis=0)
    col_means = np.where(mask, values, 0.0).sum(axis=0) / np.maximum(counts, 1)
    filled = np.where(mask, values, col_means)
    previous = np.inf
    for _ in range(max_iter):
        mu = filled.mean(axis=0)
        left, sing, right_t = np.linalg.svd(filled - mu, full_matrices=False)
        V = right_t[:q].T
        U = left[:, :q] * sing[:q]
        fit = U @ V.T + mu
        rss = float(np.sum(np.where(mask, values - fit, 0.0) ** 2))
        filled = np.where(mask, values, fit)
        if np.isfinite(previous) and previous - rss <= tol * previous:
            break
        previous = rss
    mu = filled.mean(axis=0)
    left, sing, right_t = np.linalg.svd(filled - mu, full_matrices=False)
    V = right_t[:q].T
    return V, (filled - mu) @ V, mu, filled


def project_rows(values: NDArray, work: NDArray, V: NDArray, mu: NDArray) -> Tuple[NDArray, NDArray]:
    """
    Least-squares scores of each row from its working cells, and the fitted rows.

    Rows without a working cell get zero scores.
    """
    D = np.where(work, values - mu, 0.0)
    U = D @ V
    for i in np.flatnonzero(~work.all(axis=1)):
        obs = work[i]
        U[i] = np.linalg.lstsq(V[obs], D[i, obs], rcond=None)[0] if obs.any() else 0.0
    return U, mu + U @ V.T


def orthogonal_distances(values: NDArray, work: NDArray, V: NDArray, mu: NDArray) -> NDArray:
    """Squared distance of each row to the affine subspace, rescaled to p cells when cells are missing."""
    _, fitted = project_rows(values, work, V, mu)
    sq = np.where(work, values - fitted, 0.0) ** 2
    return work.shape[1] * sq.sum(axis=1) / np.maximum(work.sum(axis=1), 1)


def outlyingness(Z: NDArray) -> NDArray:
    """
    Stahel-Donoho type outlyingness: the largest robustly standardized projection
    over directions through the median-centered rows and the coordinate axes.
    """
    centered = Z - np.median(Z, axis=0)
    norms = np.linalg.norm(centered, axis=1)
    # order by norm, ties by the row entries, so the direction set ignores row order
    order = np.lexsort(tuple(centered.T[::-1]) + (norms,))
    order = order[norms[order] > 0]
    if order.size > MAX_DIRECTIONS:
        order = order[np.linspace(0, order.size - 1, MAX_DIRECTIONS).round().astype(int)]
    directions = np.vstack([centered[order] / norms[order, None], np.eye(Z.shape[1])])
    proj = Z @ directions.T
    loc = np.median(proj, axis=0)
    spread = stats.median_abs_deviation(proj, axis=0, scale="normal")
    usable = spread > 0
    if not usable.any():
        return np.zeros(Z.shape[0])
    return np.max(np.abs(proj[:, usable] - loc[usable]) / spread[usable], axis=1)


def _smallest(values: NDArray, h: int) -> NDArray:
    return np.sort(np.argsort(values, kind="stable")[:h])


def _concentrate(
    values: NDArray, work: NDArray, V: NDArray, mu: NDArray, h: int, cfg: InitConfig
) -> Tuple[NDArray, NDArray, NDArray, float]:
    """C-steps: refit on the h rows closest to the current subspace until the subset repeats."""
    subset: Optional[NDArray] = None
    for _ in range(C_STEP_MAX_ITER):
        od = orthogonal_distances(values, work, V, mu)
        new = _smallest(od, h)
        if subset is not None and np.array_equal(new, subset):
            break
        subset = new
        V, _, mu, _ = iterative_svd(values[subset], work[subset], cfg.q, cfg.max_iter, cfg.tol)
    else:
        od = orthogonal_distances(values, work, V, mu)
    return V, mu, subset, float(np.sort(od)[:h].sum())


def _spherical_start(Z: NDArray, med: NDArray, scales: NDArray, q: int) -> Tuple[NDArray, NDArray]:
    """Spherical PCA of the standardized rows about their columnwise median, in data units."""
    center = np.median(Z, axis=0)
    centered = Z - center
    norms = np.linalg.norm(centered, axis=1)
    Y = centered / np.where(norms > 0, norms, 1.0)[:, None]
    _, _, right_t = np.linalg.svd(Y, full_matrices=False)
    basis, _, _ = np.linalg.svd(scales[:, None] * right_t[:q].T, full_matrices=False)
    return basis, med + scales * center


def initial_fit(X: MaskedMatrix, cfg: InitConfig) -> Tuple[NDArray, NDArray, NDArray]:
    """
    Robust starting triple (V0, U0, mu0).

    U0 = (X_imp - mu0) V0 where X_imp keeps the unflagged observed cells and fills
    flagged and missing cells from the starting fit.

    Raises:
        TooManyMissing: If a column has fewer than q + 1 observed cells
        InputError: If q is not below min(n, p)
    """
    q = cfg.q
    if not q < min(X.n, X.p):
        raise InputError(f"rank {q} must be below min(n, p) = {min(X.n, X.p)}")
    X.require_rank(q)
    values, mask = X.values, X.mask

    masked = np.where(mask, values, np.nan)
    med = np.nanmedian(masked, axis=0)
    scales, _ = column_mscales(np.where(mask, values - med, 0.0), mask)
    z = np.where(mask, (values - med) / scales, 0.0)
    work = mask & (np.abs(z) <= cfg.univariate_cutoff)

    # keep enough cells per column for a rank-q fit
    short = np.flatnonzero(work.sum(axis=0) < q + 1)
    if short.size:
        logger.warning(f"⚠️ Flagging skipped for sparse columns {short.tolist()}")
        work[:, short] = mask[:, short]
    logger.debug(f"Initializer flagged {int(mask.sum() - work.sum())} cells")
    Z = np.where(work, z, 0.0)

    h = min(X.n, max(math.ceil(cfg.subset_fraction * X.n), q + 1))
    starts: List[Tuple[str, NDArray, NDArray]] = []
    if cfg.spherical:
        starts.append(("spherical", *_spherical_start(Z, med, scales, q)))
    core = _smallest(outlyingness(Z), h)
    V, _, mu, _ = iterative_svd(values[core], work[core], q, cfg.max_iter, cfg.tol)
    starts.append(("outlyingness", V, mu))

    best = None
    for name, V, mu in starts:
        V, mu, subset, crit = _concentrate(values, work, V, mu, h, cfg)
        logger.debug(f"Initializer start {name}: trimmed orthogonal distance {crit:.6g}")
        if best is None or crit < best[3]:
            best = (V, mu, subset, crit)
    V, mu, subset, _ = best

    # reweighting: every row whose orthogonal distance passes the cutoff joins the final fit
    od = np.sqrt(orthogonal_distances(values, work, V, mu))
    t = od ** (2.0 / 3.0)
    spread = stats.median_abs_deviation(t, scale="normal")
    cut = (np.median(t) + spread * stats.norm.ppf(REWEIGHT_QUANTILE)) ** 1.5
    kept = od <= cut
    kept[subset] = True
    logger.debug(f"Initializer keeps {int(kept.sum())} of {X.n} rows")
    V, _, mu, _ = iterative_svd(values[kept], work[kept], q, cfg.max_iter, cfg.tol)

    V = V * fix_signs(V)
    _, fitted = project_rows(values, work, V, mu)
    imputed = np.where(work, values, fitted)
    return V, (imputed - mu) @ V, mu


def initial_scales(
    X: MaskedMatrix, V0: NDArray, U0: NDArray, mu0: NDArray, kernel1: RhoKernel
) -> ScalePack:
    """sigma1 per column from the starting residuals, then sigma2 from the RT values built on sigma1."""
    R = residual_matrix(X, V0, U0, mu0)
    sigma1, flags = column_mscales(R, X.mask)
    rt = row_total_deviations(R, X.mask, sigma1, kernel1)
    sigma2, degenerate = mscale_or_floor(rt)
    if degenerate:
        logger.warning("⚠️ Row scale floored: almost every total deviation is zero")
    return ScalePack(sigma1=sigma1, sigma2=sigma2, flags=flags)

"""
Postprocess Module
Orthonormal loadings, a deterministic robust location/scatter of the scores
(minimum covariance determinant with fixed starts), principal directions with
eigenvalues, and the rank-selection curve.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy import stats

from .errors import DegenerateScatter, InputError, RankDeficient
from .irls import fit as irls_fit
from .kernels import column_mscales, mscale_or_floor, qn_scale
from .models import MaskedMatrix, ScalePack, SubspaceFit
from .objective import objective_from_residuals, row_total_deviations
from .schemas import IrlsOptions
from .utils import chi2_quantile, fix_signs

logger = logging.getLogger(__name__)

C_STEP_MAX_ITER = 100
COND_LIMIT = 1e-12


@dataclass(frozen=True)
class RankCurve:
    ranks: List[int]
    nu: List[float]
    nu0: float
    explained: List[float]
    threshold: float
    selected: Optional[int] = None


def orthonormalize(V: NDArray, U: NDArray, mu: NDArray) -> Tuple[NDArray, NDArray, NDArray]:
    """
    Replace V by an orthonormal basis of its span and re-express the scores.

    Raises:
        RankDeficient: If V has numerically lost a column
    """
    basis, sing, _ = np.linalg.svd(V, full_matrices=False)
    if sing[-1] < 1e-10 * sing[0]:
        raise RankDeficient(f"loadings have singular values {sing.tolist()}")
    return basis, U @ (V.T @ basis), mu


# ===== MCD on the scores =====

def _robust_standardize(Ut: NDArray) -> Tuple[NDArray, NDArray]:
    """Coordinatewise median and Qn; the standard deviation stands in for a zero Qn."""
    center = np.median(Ut, axis=0)
    spread = np.array([qn_scale(col) for col in Ut.T])
    fallback = Ut.std(axis=0)
    spread = np.where(spread > 0, spread, fallback)
    if np.any(spread <= 0):
        raise DegenerateScatter("a score coordinate is constant")
    return center, spread


def _corr(Y: NDArray) -> NDArray:
    return np.atleast_2d(np.corrcoef(Y, rowvar=False))


def _initial_shapes(Z: NDArray) -> List[NDArray]:
    """Deterministic starting shapes on standardized scores."""
    n, q = Z.shape
    ranks = np.apply_along_axis(stats.rankdata, 0, Z)
    norms = np.linalg.norm(Z, axis=1)
    signs = Z / np.where(norms > 0, norms, 1.0)[:, None]
    half = np.argsort(norms, kind="stable")[: (n + 1) // 2]
    shapes = [
        np.eye(q),
        _corr(np.tanh(Z)),
        _corr(ranks),
        _corr(stats.norm.ppf((ranks - 1.0 / 3.0) / (n + 1.0 / 3.0))),
        signs.T @ signs / n,
        np.atleast_2d(np.cov(Z[half], rowvar=False)),
    ]
    return [S for S in shapes if np.all(np.isfinite(S))]


def _distances(Z: NDArray, center: NDArray, cov: NDArray) -> NDArray:
    diff = Z - center
    return np.einsum("ij,ij->i", diff @ np.linalg.pinv(cov), diff)


def _c_steps(Z: NDArray, subset: NDArray, h: int) -> Tuple[NDArray, NDArray, float]:
    for _ in range(C_STEP_MAX_ITER):
        center = Z[subset].mean(axis=0)
        cov = np.atleast_2d(np.cov(Z[subset], rowvar=False))
        evals = np.linalg.eigvalsh(cov)
        if evals[0] <= COND_LIMIT * evals[-1]:
            raise DegenerateScatter("h-subset covariance is singular")
        logdet = float(np.sum(np.log(evals)))
        new = np.sort(np.argsort(_distances(Z, center, cov), kind="stable")[:h])
        if np.array_equal(new, subset):
            break
        subset = new
    return center, cov, logdet


def robust_scores_shape(Ut: NDArray) -> Tuple[NDArray, NDArray]:
    """
    Robust location and scatter of the n x q scores.

    Six deterministic starts, C-steps on subsets of size ceil((n + q + 1) / 2),
    the lowest determinant wins, rescaled for consistency at the Gaussian.

    Raises:
        DegenerateScatter: If every h-subset covariance is singular
    """
    Ut = np.asarray(Ut, dtype=float)
    n, q = Ut.shape
    if n <= 2 * q:
        raise InputError(f"need more than {2 * q} score rows, got {n}")
    h = math.ceil((n + q + 1) / 2)
    med, spread = _robust_standardize(Ut)
    Z = (Ut - med) / spread

    best = None
    for shape in _initial_shapes(Z):
        evals, evecs = np.linalg.eigh(shape)
        proj = Z @ evecs
        lam = np.array([qn_scale(col) for col in proj.T]) ** 2
        lam = np.where(lam > 0, lam, proj.var(axis=0))
        if np.any(lam <= 0):
            continue
        cov0 = evecs @ np.diag(lam) @ evecs.T
        center0 = evecs @ np.median(proj, axis=0)
        subset = np.sort(np.argsort(_distances(Z, center0, cov0), kind="stable")[:h])
        try:
            center, cov, logdet = _c_steps(Z, subset, h)
        except DegenerateScatter:
            continue
        if best is None or logdet < best[2]:
            best = (center, cov, logdet)
    if best is None:
        raise DegenerateScatter("no start produced a regular h-subset")

    center, cov, _ = best
    factor = np.median(_distances(Z, center, cov)) / chi2_quantile(0.5, q)
    cov = cov * factor
    return med + spread * center, cov * np.outer(spread, spread)


def finalize(fit: SubspaceFit, Ut: NDArray, mu_U: NDArray, Sigma_U: NDArray) -> SubspaceFit:
    """
    Rotate to the principal directions of the robust score scatter.

    fit.V must already be orthonormal (output of orthonormalize) and Ut the matching scores.
    The fitted matrix U V^T + 1 mu^T is unchanged.
    """
    Sigma_U = (Sigma_U + Sigma_U.T) / 2
    evals, evecs = np.linalg.eigh(Sigma_U)
    order = np.argsort(evals)[::-1]
    evals, evecs = np.clip(evals[order], 0.0, None), evecs[:, order]
    evecs = evecs * fix_signs(fit.V @ evecs)
    return replace(
        fit,
        V=fit.V @ evecs,
        U=(Ut - mu_U) @ evecs,
        mu=fit.mu + fit.V @ mu_U,
        eigenvalues=evals,
    )


# ===== Rank selection =====

def baseline_objective(X: MaskedMatrix, opts: IrlsOptions) -> float:
    """Objective on the residuals from the columnwise medians, with scales estimated on them."""
    med = np.nanmedian(X.to_array(), axis=0)
    R = np.where(X.mask, X.values - med, 0.0)
    sigma1, flags = column_mscales(R, X.mask)
    sigma2, _ = mscale_or_floor(row_total_deviations(R, X.mask, sigma1, opts.kernel1))
    scales = ScalePack(sigma1=sigma1, sigma2=sigma2, flags=flags)
    return objective_from_residuals(R, X.mask, scales, opts.kernel1, opts.kernel2)


def select_rank(
    X: MaskedMatrix, rmax: int, threshold: float = 0.8, opts: Optional[IrlsOptions] = None
) -> RankCurve:
    """Objective per rank 1..rmax against the median baseline; first rank reaching the threshold."""
    opts = opts or IrlsOptions()
    if not 1 <= rmax < min(X.n, X.p):
        raise InputError(f"max rank must lie in [1, {min(X.n, X.p) - 1}]")
    nu0 = baseline_objective(X, opts)
    ranks = list(range(1, rmax + 1))
    nu = [irls_fit(X, r, opts).objective_trace[-1] for r in ranks]
    explained = [1.0 - v / nu0 if nu0 > 0 else 1.0 for v in nu]
    selected = next((r for r, e in zip(ranks, explained) if e >= threshold), None)
    logger.info(f"📝 Rank curve {[round(e, 4) for e in explained]}, selected {selected}")
    return RankCurve(ranks=ranks, nu=nu, nu0=nu0, explained=explained, threshold=threshold, selected=selected)

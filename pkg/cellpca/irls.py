"""
IRLS Engine
Concentration steps (loadings, scores, center, weight refresh) with monotone objective,
the zero-weight column guard, and robust single-row scores used for prediction.
"""

import logging
import warnings
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from .config import settings
from .errors import DegenerateColumn, ZeroWeightGuard
from .initializer import initial_fit, initial_scales
from .kernels import RhoKernel, rho, weight
from .models import MaskedMatrix, ScalePack, SubspaceFit, WeightState
from .objective import compute_weights, objective_from_residuals, residual_matrix
from .schemas import InitConfig, IrlsOptions

logger = logging.getLogger(__name__)


def solve_psd_batched(A: NDArray, b: NDArray, rcond: float = settings.PINV_RCOND) -> NDArray:
    """
    Minimum-norm solutions of a stack of symmetric PSD systems A_k x_k = b_k.

    Eigenvalues below rcond times the largest one are treated as zero, so an
    all-zero system returns x = 0.
    """
    evals, evecs = np.linalg.eigh(A)
    cutoff = rcond * np.maximum(evals.max(axis=-1, keepdims=True), 0.0)
    keep = evals > cutoff
    inv = np.where(keep, 1.0 / np.where(keep, evals, 1.0), 0.0)
    coef = np.einsum("nkl,nk->nl", evecs, b) * inv
    return np.einsum("nkl,nl->nk", evecs, coef)


def update_loadings(X: MaskedMatrix, U: NDArray, mu: NDArray, W: NDArray, rcond: float = settings.PINV_RCOND) -> NDArray:
    """Step (a): per column, weighted least squares of x_j - mu_j on the scores."""
    Y = np.where(X.mask, X.values - mu, 0.0)
    A = np.einsum("ij,ik,il->jkl", W, U, U)
    b = np.einsum("ij,ik->jk", W * Y, U)
    return solve_psd_batched(A, b, rcond)


def update_scores(X: MaskedMatrix, V: NDArray, mu: NDArray, Wc: NDArray, rcond: float = settings.PINV_RCOND) -> NDArray:
    """Step (b): per row, weighted least squares on the loadings with cellwise weights only."""
    Y = np.where(X.mask, X.values - mu, 0.0)
    A = np.einsum("ij,jk,jl->ikl", Wc, V, V)
    b = np.einsum("ij,jk->ik", Wc * Y, V)
    return solve_psd_batched(A, b, rcond)


def update_center(X: MaskedMatrix, V: NDArray, U: NDArray, W: NDArray) -> NDArray:
    """Step (c): weighted column means of x - U V^T."""
    totals = W.sum(axis=0)
    dead = np.flatnonzero(totals <= 0)
    if dead.size:
        raise DegenerateColumn(f"columns {dead.tolist()} have no positive weight")
    return (W * np.where(X.mask, X.values - U @ V.T, 0.0)).sum(axis=0) / totals


def zero_weight_columns(mask: NDArray, W: NDArray, cap: float) -> NDArray:
    """Columns whose share of zero combined weights among observed cells exceeds cap."""
    zeros = (mask & (W <= 0)).sum(axis=0)
    return np.flatnonzero(zeros > cap * mask.sum(axis=0))


@dataclass(frozen=True)
class IrlsState:
    V: NDArray
    U: NDArray
    mu: NDArray
    weights: WeightState
    objective: float


def make_state(X: MaskedMatrix, V: NDArray, U: NDArray, mu: NDArray, scales: ScalePack, opts: IrlsOptions) -> IrlsState:
    R = residual_matrix(X, V, U, mu)
    weights = compute_weights(R, X.mask, scales, opts.kernel1, opts.kernel2)
    objective = objective_from_residuals(R, X.mask, scales, opts.kernel1, opts.kernel2)
    return IrlsState(V=V, U=U, mu=mu, weights=weights, objective=objective)


def concentration_step(state: IrlsState, X: MaskedMatrix, scales: ScalePack, opts: IrlsOptions) -> IrlsState:
    """
    One pass of steps (a), (b), (c) followed by the weight refresh (d).

    Raises:
        ZeroWeightGuard: If a column of the refreshed weights has too many zeros
    """
    V = update_loadings(X, state.U, state.mu, state.weights.W, opts.pinv_rcond)
    U = update_scores(X, V, state.mu, state.weights.Wc, opts.pinv_rcond)
    mu = update_center(X, V, U, state.weights.W)
    new = make_state(X, V, U, mu, scales, opts)
    bad = zero_weight_columns(X.mask, new.weights.W, opts.zero_weight_cap)
    if bad.size:
        raise ZeroWeightGuard(bad, opts.zero_weight_cap)
    return new


def fit(
    X: MaskedMatrix,
    q: int,
    opts: Optional[IrlsOptions] = None,
    init: Optional[InitConfig] = None,
    start: Optional[Tuple[NDArray, NDArray, NDArray]] = None,
    scales: Optional[ScalePack] = None,
) -> SubspaceFit:
    """
    Run the initializer and the concentration steps until the objective settles.

    Args:
        X: Validated data
        q: Rank
        opts: Loop options and kernels
        init: Initializer settings (rank q, default cutoff)
        start: Optional (V0, U0, mu0) replacing the initializer
        scales: Optional frozen scales replacing the initial estimates

    Returns:
        Raw fit; loadings are not yet orthonormalized
    """
    opts = opts or IrlsOptions()
    if start is None:
        V, U, mu = initial_fit(X, init or InitConfig(q=q))
    else:
        V, U, mu = (np.asarray(a, dtype=float) for a in start)
        X.require_rank(q)
    if scales is None:
        scales = initial_scales(X, V, U, mu, opts.kernel1)

    state = make_state(X, V, U, mu, scales, opts)
    trace = [state.objective]
    converged = False
    iterations = 0
    for k in range(1, opts.max_iter + 1):
        try:
            new = concentration_step(state, X, scales, opts)
        except (ZeroWeightGuard, DegenerateColumn) as exc:
            logger.warning(f"⚠️ {exc}; keeping the result of iteration {k - 1}")
            break
        change = state.objective - new.objective
        state = new
        trace.append(new.objective)
        iterations = k
        if abs(change) <= opts.rel_tol * abs(trace[-2]):
            converged = True
            break

    logger.info(
        f"✅ IRLS stopped after {iterations} iterations, objective {state.objective:.6g}, converged={converged}"
    )
    return SubspaceFit(
        V=state.V,
        U=state.U,
        mu=state.mu,
        scales=scales,
        weights=state.weights,
        kernel1=opts.kernel1,
        kernel2=opts.kernel2,
        objective_trace=trace,
        converged=converged,
        iterations=iterations,
    )


# ===== Robust scores of single rows =====

def _inner_loss(Y: NDArray, mask: NDArray, U: NDArray, V: NDArray, sigma1: NDArray, kernel1: RhoKernel) -> NDArray:
    r = np.where(mask, Y - U @ V.T, 0.0)
    return np.where(mask, sigma1 ** 2 * rho(kernel1, r / sigma1), 0.0).sum(axis=1)


def robust_scores_batch(
    values: NDArray,
    mask: NDArray,
    V: NDArray,
    mu: NDArray,
    sigma1: NDArray,
    kernel1: RhoKernel,
    start: Optional[NDArray] = None,
    max_iter: int = settings.INNER_MAX_ITER,
    tol: float = settings.INNER_TOL,
) -> Tuple[NDArray, NDArray, NDArray]:
    """
    Robust regression of each row on the loadings with cellwise weights.

    Without a start, three starts are tried per row (least squares on all observed
    cells, the center, least squares on the less outlying half of the cells) and the
    one with the smallest inner loss is kept.

    Returns:
        (U, Wc, ok): scores, cell weights (0 on missing cells) and a flag that is
        False when a row has no observed cell or all its weights vanished; U is NaN there
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    mask = np.atleast_2d(np.asarray(mask, dtype=bool)) & np.isfinite(values)
    Y = np.where(mask, values - mu, 0.0)
    gram = np.einsum("jk,jl->jkl", V, V)

    def solve(w: NDArray) -> NDArray:
        return solve_psd_batched(np.einsum("ij,jkl->ikl", w, gram), (w * Y) @ V)

    def cell_weights(u: NDArray) -> NDArray:
        r = np.where(mask, Y - u @ V.T, 0.0)
        return np.where(mask, weight(kernel1, r / sigma1), 0.0)

    def refine(u: NDArray) -> NDArray:
        for _ in range(max_iter):
            u_new = solve(cell_weights(u))
            step = np.linalg.norm(u_new - u, axis=1)
            u = u_new
            if np.all(step <= tol * (1.0 + np.linalg.norm(u, axis=1))):
                break
        return u

    if start is not None:
        U = refine(np.asarray(start, dtype=float).reshape(Y.shape[0], V.shape[1]))
    else:
        dev = np.where(mask, np.abs(Y) / sigma1, np.nan)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            half = mask & (dev <= np.nanmedian(dev, axis=1, keepdims=True))
        starts = [solve(mask.astype(float)), np.zeros((Y.shape[0], V.shape[1])), solve(half.astype(float))]
        candidates = [refine(u) for u in starts]
        losses = np.stack([_inner_loss(Y, mask, u, V, sigma1, kernel1) for u in candidates])
        best = np.argmin(losses, axis=0)
        U = np.stack(candidates)[best, np.arange(Y.shape[0])]

    Wc = cell_weights(U)
    ok = mask.any(axis=1) & (Wc.sum(axis=1) > 0)
    U = np.where(ok[:, None], U, np.nan)
    return U, Wc, ok


def robust_inner_scores(
    x: NDArray,
    mask_row: NDArray,
    V: NDArray,
    mu: NDArray,
    scales: ScalePack,
    kernel1: RhoKernel,
) -> Tuple[Optional[NDArray], NDArray]:
    """Scores and cell weights of one row; scores are None when the row cannot be scored."""
    U, Wc, ok = robust_scores_batch(x[None, :], mask_row[None, :], V, mu, scales.sigma1, kernel1)
    return (U[0] if ok[0] else None), Wc[0]

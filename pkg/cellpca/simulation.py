"""
Simulation Harness
Data generators (A09, ALYZ), contamination and NA injection, estimator runners,
the angle and MSE metrics, and the seeded Monte Carlo study loop.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
from numpy.typing import NDArray

from .errors import CellPCAError, EmptyCleanSet, FractionTooLarge, InputError, RankMismatch, RetriesExhausted, UnsupportedP
from .initializer import iterative_svd
from .irls import fit as irls_fit
from .models import MaskedMatrix
from .schemas import IrlsOptions, SimConfig
from .utils import random_orthogonal

logger = logging.getLogger(__name__)

Seed = Union[int, np.random.SeedSequence]
Estimator = Callable[[MaskedMatrix, int], Tuple[NDArray, NDArray]]

A09_BASE = -0.9
ALYZ_TOP = {20: (9.57, 6.70), 200: (104.88, 73.42)}
ALYZ_THIRD = 0.11
ALYZ_REST = 0.10
ROW_SHRINK = 1.5  # outlying rows are drawn from N(shift, Sigma / 1.5)
NA_RETRIES = 100
ICPCA_MAX_ITER = 200


# ===== Generators =====

def a09_covariance(p: int) -> NDArray:
    idx = np.arange(p)
    return A09_BASE ** np.abs(idx[:, None] - idx[None, :])


def gen_a09(n: int, p: int, seed: Seed) -> NDArray:
    """n i.i.d. rows from N(0, Sigma) with Sigma_jk = (-0.9)^|j-k|."""
    rng = np.random.default_rng(seed)
    chol = np.linalg.cholesky(a09_covariance(p))
    return rng.standard_normal((n, p)) @ chol.T


def alyz_spectrum(p: int, strict: bool = False) -> NDArray:
    """
    Eigenvalues (t1, t2, 0.11, 0.10, ..., 0.10) with tabulated t1, t2 for p = 20 and 200.

    Other p use a linear interpolation (or extrapolation) of t1, t2 in p.
    """
    if p in ALYZ_TOP:
        top = ALYZ_TOP[p]
    elif strict:
        raise UnsupportedP(f"p={p}; tabulated spectra exist for {sorted(ALYZ_TOP)}")
    else:
        frac = (p - 20) / (200 - 20)
        top = tuple(max(a + frac * (b - a), ALYZ_THIRD) for a, b in zip(ALYZ_TOP[20], ALYZ_TOP[200]))
        logger.info(f"📝 Interpolated ALYZ spectrum for p={p}: {top}")
    values = list(top) + [ALYZ_THIRD] + [ALYZ_REST] * max(p - 3, 0)
    return np.array(values[:p])


def gen_alyz(n: int, p: int, seed: Seed, strict: bool = False) -> Tuple[NDArray, NDArray]:
    """Random-frame covariance with the fixed spectrum, and n rows drawn from it."""
    frame_seed, draw_seed = np.random.SeedSequence(seed).spawn(2) if isinstance(seed, int) else seed.spawn(2)
    O = random_orthogonal(p, np.random.default_rng(frame_seed))
    Sigma = O @ np.diag(alyz_spectrum(p, strict)) @ O.T
    Sigma = (Sigma + Sigma.T) / 2
    rng = np.random.default_rng(draw_seed)
    return rng.standard_normal((n, p)) @ np.linalg.cholesky(Sigma).T, Sigma


def eigen_frame(Sigma: NDArray) -> NDArray:
    """Eigenvectors of Sigma by decreasing eigenvalue."""
    evals, evecs = np.linalg.eigh(Sigma)
    return evecs[:, np.argsort(evals)[::-1]]


def true_subspace(Sigma: NDArray, q: int) -> NDArray:
    return eigen_frame(Sigma)[:, :q]


# ===== Contamination =====

@dataclass(frozen=True)
class ContaminationTruth:
    cells: NDArray
    rows: NDArray


def row_cell_coupling(p: int) -> float:
    """gamma_r / gamma_c in the mixed scheme."""
    return 4.0 if p >= 200 else 1.5


def contaminate(
    data: NDArray,
    Sigma: NDArray,
    scheme: str,
    gamma_c: float,
    gamma_r: Optional[float],
    fraction: float,
    seed: Seed,
    model: str = "A09",
    q: int = 2,
) -> Tuple[NDArray, ContaminationTruth]:
    """
    Inject cellwise, rowwise or mixed contamination.

    cellwise: add gamma_c (A09) or gamma_c * sigma_j (ALYZ) to a random fraction of cells.
    rowwise: replace a random fraction of rows by N(gamma_r (e1 + e_k), Sigma / 1.5),
        with k = 3 for A09 and k = q + 1 for ALYZ.
    mixed: half the fraction each; gamma_r defaults to the coupling times gamma_c.
    Outlying cells are only placed in rows that are not replaced.

    Raises:
        FractionTooLarge: If the row fraction reaches 50%
    """
    rng = np.random.default_rng(seed)
    n, p = data.shape
    out = np.array(data, dtype=float)
    cells = np.zeros((n, p), dtype=bool)
    rows = np.zeros(n, dtype=bool)
    if scheme == "none":
        return out, ContaminationTruth(cells, rows)
    row_frac = {"rowwise": fraction, "mixed": fraction / 2}.get(scheme, 0.0)
    cell_frac = {"cellwise": fraction, "mixed": fraction / 2}.get(scheme, 0.0)
    if row_frac >= 0.5:
        raise FractionTooLarge(f"row fraction {row_frac} must stay below 0.5")
    if scheme == "mixed" and gamma_r is None:
        gamma_r = row_cell_coupling(p) * gamma_c

    if row_frac > 0 and gamma_r:
        idx = rng.choice(n, size=int(round(row_frac * n)), replace=False)
        frame = eigen_frame(Sigma)
        second = 2 if model.upper() == "A09" else q
        shift = gamma_r * (frame[:, 0] + frame[:, second])
        chol = np.linalg.cholesky(Sigma / ROW_SHRINK)
        out[idx] = shift + rng.standard_normal((idx.size, p)) @ chol.T
        rows[idx] = True

    if cell_frac > 0 and gamma_c:
        free = np.flatnonzero(np.repeat(~rows, p))
        pick = rng.choice(free, size=int(round(cell_frac * n * p)), replace=False)
        size = gamma_c * (np.sqrt(np.diag(Sigma)) if model.upper() == "ALYZ" else np.ones(p))
        out.flat[pick] += size[pick % p]
        cells.flat[pick] = True
    return out, ContaminationTruth(cells, rows)


def inject_na(data: NDArray, fraction: float, seed: Seed, q: int = 2) -> MaskedMatrix:
    """
    Set exactly floor(fraction * n * p) random cells missing.

    Placements leaving an empty row or a column with fewer than q + 1 observed
    cells are redrawn.
    """
    if not 0 <= fraction < 0.5:
        raise FractionTooLarge(f"NA fraction {fraction} must lie in [0, 0.5)")
    rng = np.random.default_rng(seed)
    n, p = data.shape
    k = int(math.floor(fraction * n * p))
    for attempt in range(NA_RETRIES):
        missing = np.zeros(n * p, dtype=bool)
        missing[rng.choice(n * p, size=k, replace=False)] = True
        mask = ~missing.reshape(n, p)
        if mask.any(axis=1).all() and (mask.sum(axis=0) >= q + 1).all():
            return MaskedMatrix(np.where(mask, data, 0.0), mask)
        logger.debug(f"NA placement {attempt} violated the minimums, redrawing")
    raise RetriesExhausted(f"no valid NA placement after {NA_RETRIES} attempts")


# ===== Metrics =====

def _basis(A: NDArray) -> NDArray:
    A = np.asarray(A, dtype=float)
    if A.shape[0] == A.shape[1]:
        evals, evecs = np.linalg.eigh((A + A.T) / 2)
        return evecs[:, evals > 0.5]
    Q, _ = np.linalg.qr(A)
    return Q


def subspace_angle(A: NDArray, B: NDArray) -> float:
    """
    Largest principal angle between two subspaces given by bases or projection matrices.

    Uses atan2(sin, cos) so that small angles keep full precision.

    Raises:
        RankMismatch: If the dimensions or ranks differ
    """
    Q1, Q2 = _basis(A), _basis(B)
    if Q1.shape != Q2.shape:
        raise RankMismatch(f"subspaces of shapes {Q1.shape} and {Q2.shape}")
    cross = Q1.T @ Q2
    cos = np.linalg.svd(cross, compute_uv=False).min()
    sin = np.linalg.norm(Q2 - Q1 @ cross, ord=2)
    return float(np.clip(np.arctan2(sin, cos), 0.0, np.pi / 2))


def mse_clean(
    data: NDArray, predictions: NDArray, cells: NDArray, rows: NDArray, missing: NDArray
) -> float:
    """Mean squared prediction error over observed clean cells of clean rows."""
    clean = ~np.asarray(missing, dtype=bool) & ~np.asarray(cells, dtype=bool) & ~np.asarray(rows, dtype=bool)[:, None]
    if not clean.any():
        raise EmptyCleanSet("no observed clean cell in a clean row")
    diff = (np.asarray(data) - np.asarray(predictions))[clean]
    return float(np.mean(diff * diff))


# ===== Estimators =====

def classical_pca(X: MaskedMatrix, q: int) -> Tuple[NDArray, NDArray]:
    """SVD on complete data, iterative missing-data SVD otherwise."""
    if X.mask.all():
        mu = X.values.mean(axis=0)
        _, _, right_t = np.linalg.svd(X.values - mu, full_matrices=False)
        V = right_t[:q].T
        return V, (X.values - mu) @ V @ V.T + mu
    V, U, mu, _ = iterative_svd(X.values, X.mask, q, max_iter=ICPCA_MAX_ITER)
    return V, U @ V.T + mu


def _irls_estimator(mode: str) -> Estimator:
    def run(X: MaskedMatrix, q: int) -> Tuple[NDArray, NDArray]:
        result = irls_fit(X, q, IrlsOptions.for_mode(mode))
        return result.V, result.fitted()

    run.__name__ = f"run_{mode.replace('-', '_')}"
    return run


ESTIMATORS: Dict[str, Estimator] = {
    "cpca": classical_pca,
    "only-cell": _irls_estimator("only-cell"),
    "only-row": _irls_estimator("only-row"),
    "cellpca": _irls_estimator("cellpca"),
}


def register_estimator(name: str, estimator: Estimator) -> None:
    """Add an estimator returning (loadings, fitted matrix) for (data, rank)."""
    ESTIMATORS[name] = estimator


# ===== Study =====

@dataclass(frozen=True)
class SimRecord:
    model: str
    scheme: str
    estimator: str
    gamma: float
    replicate: int
    angle: float
    mse: float
    error: str = ""


@dataclass
class SimResult:
    records: List[SimRecord] = field(default_factory=list)

    def medians(self) -> Dict[str, Dict[str, Dict[str, float]]]:
        """{estimator: {gamma: {"angle": median, "mse": median}}}, failures ignored."""
        out: Dict[str, Dict[str, Dict[str, float]]] = {}
        keys = sorted({(r.estimator, r.gamma) for r in self.records})
        for est, gamma in keys:
            chosen = [r for r in self.records if r.estimator == est and r.gamma == gamma]
            angles = np.array([r.angle for r in chosen])
            mses = np.array([r.mse for r in chosen])
            ok = np.isfinite(angles)
            out.setdefault(est, {})[repr(gamma)] = {
                "angle": float(np.median(angles[ok])) if ok.any() else float("nan"),
                "mse": float(np.median(mses[ok])) if ok.any() else float("nan"),
                "failures": int((~ok).sum()),
            }
        return out

    def median_angle(self, estimator: str, gamma: float) -> float:
        return self.medians()[estimator][repr(gamma)]["angle"]


def _gammas(scheme: str, gamma: float) -> Tuple[float, Optional[float]]:
    if scheme == "cellwise":
        return gamma, 0.0
    if scheme == "rowwise":
        return 0.0, gamma
    if scheme == "mixed":
        return gamma, None
    return 0.0, 0.0


def run_replicate(cfg: SimConfig, gamma_index: int, replicate: int) -> List[SimRecord]:
    """Generate, contaminate, blank cells and run every estimator for one seed stream."""
    gamma = cfg.gamma_grid[gamma_index]
    data_seed, cont_seed, na_seed = np.random.SeedSequence(cfg.seed, spawn_key=(gamma_index, replicate)).spawn(3)
    if cfg.model == "A09":
        Sigma = a09_covariance(cfg.p)
        data = gen_a09(cfg.n, cfg.p, data_seed)
    else:
        data, Sigma = gen_alyz(cfg.n, cfg.p, data_seed, cfg.strict)
    gamma_c, gamma_r = _gammas(cfg.contamination, gamma)
    data, truth = contaminate(data, Sigma, cfg.contamination, gamma_c, gamma_r, cfg.fraction, cont_seed, cfg.model, cfg.q)
    if cfg.na_fraction > 0:
        X = inject_na(data, cfg.na_fraction, na_seed, cfg.q)
    else:
        X = MaskedMatrix.from_array(data)
    V_true = true_subspace(Sigma, cfg.q)

    records = []
    for name in cfg.estimators:
        try:
            V, fitted = ESTIMATORS[name](X, cfg.q)
            angle = subspace_angle(V, V_true)
            mse = mse_clean(data, fitted, truth.cells, truth.rows, ~X.mask)
            error = ""
        except (CellPCAError, np.linalg.LinAlgError) as exc:
            logger.warning(f"⚠️ {name} failed at gamma={gamma}, replicate {replicate}: {exc}")
            angle, mse, error = float("nan"), float("nan"), str(exc)
        records.append(SimRecord(cfg.model, cfg.contamination, name, gamma, replicate, angle, mse, error))
    return records


def _run_task(args: Tuple[SimConfig, int, int]) -> List[SimRecord]:
    return run_replicate(*args)


def run_study(cfg: SimConfig) -> SimResult:
    """All grid points times replicates; results are independent of n_jobs."""
    unknown = [e for e in cfg.estimators if e not in ESTIMATORS]
    if unknown:
        raise InputError(f"unknown estimators {unknown}")
    tasks = [(cfg, g, r) for g in range(len(cfg.gamma_grid)) for r in range(cfg.replicates)]
    if cfg.n_jobs > 1 and tasks:
        with ProcessPoolExecutor(max_workers=cfg.n_jobs) as pool:
            chunks = list(pool.map(_run_task, tasks))
    else:
        chunks = [_run_task(t) for t in tasks]
    result = SimResult([rec for chunk in chunks for rec in chunk])
    logger.info(f"✅ Study finished: {len(tasks)} replicates, {len(result.records)} records")
    return result

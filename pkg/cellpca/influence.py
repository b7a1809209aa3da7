"""
Influence Lab
Numerical influence functions of the projection matrix P = V V^T under fully
dependent (rowwise) and fully independent (cellwise) contamination, the Jacobians
B and S of the estimating equation, R0 with the commutation matrix, and the
asymptotic covariance of vec(P).

Conventions: vec() stacks columns; the center is fixed at 0; scales are fixed at
their population values unless an influence vector for them is supplied.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from .config import settings
from .errors import MonteCarloBudgetTooSmall, SingularB
from .irls import robust_scores_batch, solve_psd_batched
from .kernels import RhoKernel, mscale, tanh_kernel
from .models import ScalePack
from .objective import compute_weights, row_total_deviations
from .utils import fix_signs

logger = logging.getLogger(__name__)

MIN_MC_SIZE = 1000
SCALE_STREAM = 0
MC_STREAM = 1
THETA_STREAM = 2
COND_LIMIT = 1e12


def vec(A: NDArray) -> NDArray:
    return np.asarray(A).reshape(-1, order="F")


def unvec(v: NDArray, rows: int) -> NDArray:
    return np.asarray(v).reshape(rows, -1, order="F")


@dataclass(frozen=True)
class ModelH0:
    """Centered Gaussian H0 with its population subspace, fixed scales and kernels."""

    cov: NDArray
    V0: NDArray
    sigma: NDArray
    kernel1: RhoKernel = field(default_factory=tanh_kernel)
    kernel2: RhoKernel = field(default_factory=tanh_kernel)
    seed: int = settings.SEED

    @property
    def p(self) -> int:
        return self.V0.shape[0]

    @property
    def q(self) -> int:
        return self.V0.shape[1]

    def sample(self, size: int, stream: int = MC_STREAM) -> NDArray:
        """Deterministic draw; different streams give independent samples."""
        rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(stream,)))
        chol = np.linalg.cholesky(self.cov)
        return rng.standard_normal((size, self.p)) @ chol.T

    @classmethod
    def from_covariance(
        cls,
        cov: NDArray,
        q: int,
        kernel1: Optional[RhoKernel] = None,
        kernel2: Optional[RhoKernel] = None,
        mc_size: int = settings.IF_MC_SIZE,
        seed: int = settings.SEED,
        refine: bool = False,
    ) -> "ModelH0":
        """
        Population model from a covariance matrix.

        V0 starts from the top-q eigenvectors. sigma1_j is the Gaussian residual
        standard deviation off that subspace, sigma2 the M-scale of the total
        deviations on a Monte Carlo sample. With refine, V0 is moved to the exact
        zero of g on the Monte Carlo sample used by InfluenceLab with the same size.
        """
        cov = np.asarray(cov, dtype=float)
        kernel1 = kernel1 or tanh_kernel()
        kernel2 = kernel2 or tanh_kernel()
        evals, evecs = np.linalg.eigh(cov)
        V0 = evecs[:, np.argsort(evals)[::-1][:q]]
        V0 = V0 * fix_signs(V0)
        off = np.eye(cov.shape[0]) - V0 @ V0.T
        sigma1 = np.sqrt(np.diag(off @ cov @ off))
        model = cls(cov=cov, V0=V0, sigma=np.append(sigma1, 1.0), kernel1=kernel1, kernel2=kernel2, seed=seed)
        draws = model.sample(mc_size, SCALE_STREAM)
        rt = row_total_deviations(draws @ off, np.ones_like(draws, dtype=bool), sigma1, kernel1)
        model = cls(cov=cov, V0=V0, sigma=np.append(sigma1, mscale(rt)), kernel1=kernel1, kernel2=kernel2, seed=seed)
        if refine:
            V0 = population_fit(model.sample(mc_size, MC_STREAM), None, V0, model.sigma, kernel1, kernel2)
            model = cls(cov=cov, V0=V0, sigma=model.sigma, kernel1=kernel1, kernel2=kernel2, seed=seed)
        return model


@dataclass(frozen=True)
class IFResult:
    matrix: NDArray
    mode: str
    z: NDArray
    mc_size: int
    fd_step: float
    seed: int


def inner_scores(X: NDArray, V: NDArray, sigma: NDArray, kernel1: RhoKernel, start: Optional[NDArray] = None) -> NDArray:
    """u_x for every row of X with center 0; rows that cannot be scored get u = 0."""
    U, _, ok = robust_scores_batch(
        X, np.ones_like(X, dtype=bool), V, np.zeros(V.shape[0]), sigma[:-1], kernel1, start=start
    )
    return np.where(ok[:, None], U, 0.0)


def g_terms(
    X: NDArray, V: NDArray, sigma: NDArray, kernel1: RhoKernel, kernel2: RhoKernel, start: Optional[NDArray] = None
) -> Tuple[NDArray, NDArray]:
    """Per-row vec(W_x (V u_x - x) u_x^T) and the scores u_x."""
    U = inner_scores(X, V, sigma, kernel1, start)
    fitted = U @ V.T
    W = compute_weights(X - fitted, np.ones_like(X, dtype=bool), ScalePack.from_vector(sigma), kernel1, kernel2).W
    M = W * (fitted - X)
    return (U[:, :, None] * M[:, None, :]).reshape(X.shape[0], -1), U


def g_vector(
    dist: NDArray,
    V: NDArray,
    sigma: NDArray,
    kernel1: RhoKernel,
    kernel2: RhoKernel,
    atom: bool = False,
    start: Optional[NDArray] = None,
    sample_weights: Optional[NDArray] = None,
) -> NDArray:
    """
    vec(E[W_x (V u_x - x) u_x^T]) over a Monte Carlo sample, or exactly for a point mass.

    Raises:
        MonteCarloBudgetTooSmall: If a sample has fewer than 1000 draws
    """
    X = np.atleast_2d(np.asarray(dist, dtype=float))
    if not atom and X.shape[0] < MIN_MC_SIZE:
        raise MonteCarloBudgetTooSmall(f"{X.shape[0]} draws, need at least {MIN_MC_SIZE}")
    terms, _ = g_terms(X, V, sigma, kernel1, kernel2, start)
    if sample_weights is None:
        return terms.mean(axis=0)
    return sample_weights @ terms / sample_weights.sum()


def population_fit(
    sample: NDArray,
    sample_weights: Optional[NDArray],
    V_start: NDArray,
    sigma: NDArray,
    kernel1: RhoKernel,
    kernel2: RhoKernel,
    max_iter: int = 500,
    tol: float = 1e-12,
) -> NDArray:
    """
    Orthonormal V solving E[W_x (V u_x - x) u_x^T] = 0 on a weighted sample (center fixed at 0).

    Alternates the weighted loadings update with a full re-solve of the scores.
    """
    X = np.asarray(sample, dtype=float)
    sw = np.ones(X.shape[0]) if sample_weights is None else np.asarray(sample_weights, dtype=float)
    scales = ScalePack.from_vector(sigma)
    ones = np.ones_like(X, dtype=bool)
    V = V_start
    U = inner_scores(X, V, sigma, kernel1)
    for _ in range(max_iter):
        W = compute_weights(X - U @ V.T, ones, scales, kernel1, kernel2).W * sw[:, None]
        V_new = solve_psd_batched(np.einsum("ij,ik,il->jkl", W, U, U), np.einsum("ij,ik->jk", W * X, U))
        V_new, _ = np.linalg.qr(V_new)
        # warm start: previous fitted points expressed in the new basis
        U = inner_scores(X, V_new, sigma, kernel1, start=U @ (V.T @ V_new))
        moved = np.linalg.norm(V_new @ V_new.T - V @ V.T)
        V = V_new
        if moved <= tol:
            break
    return V * fix_signs(V)


def commutation_matrix(p: int, q: int) -> NDArray:
    """K with K vec(A) = vec(A^T) for p x q matrices A."""
    K = np.zeros((p * q, p * q))
    for i in range(p):
        for j in range(q):
            K[i * q + j, j * p + i] = 1.0
    return K


def matrix_R0(V0: NDArray) -> NDArray:
    """R0 = V0 (x) (I - P0) + ((I - P0) (x) V0) K_{p,q}: maps vec(dV) to vec(dP)."""
    p, q = V0.shape
    off = np.eye(p) - V0 @ V0.T
    return np.kron(V0, off) + np.kron(off, V0) @ commutation_matrix(p, q)


class InfluenceLab:
    """
    Shared Monte Carlo sample, Jacobians and influence functions for one H0.

    B has a q^2-dimensional null space spanned by vec(V0 A) and its range is
    {vec(G): V0^T G = 0}; it is inverted on that range, which R0 needs only.
    """

    def __init__(self, model: ModelH0, mc_size: int = settings.IF_MC_SIZE, fd_step: float = settings.IF_FD_STEP):
        if mc_size < MIN_MC_SIZE:
            raise MonteCarloBudgetTooSmall(f"{mc_size} draws, need at least {MIN_MC_SIZE}")
        self.model = model
        self.mc_size = mc_size
        self.fd_step = fd_step
        self.sample = model.sample(mc_size, MC_STREAM)
        self.u0 = inner_scores(self.sample, model.V0, model.sigma, model.kernel1)

    def _g(self, V: NDArray, sigma: NDArray) -> NDArray:
        m = self.model
        return g_vector(self.sample, V, sigma, m.kernel1, m.kernel2, start=self.u0)

    def jacobian_B(self, fd_step: Optional[float] = None) -> NDArray:
        """Central differences of g in vec(V) at V0 with common random numbers."""
        step = fd_step or self.fd_step
        V0, sigma = self.model.V0, self.model.sigma
        base = vec(V0)
        cols = []
        for k in range(base.size):
            h = step * max(1.0, abs(base[k]))
            plus, minus = base.copy(), base.copy()
            plus[k] += h
            minus[k] -= h
            diff = self._g(unvec(plus, V0.shape[0]), sigma) - self._g(unvec(minus, V0.shape[0]), sigma)
            cols.append(diff / (2 * h))
        return np.column_stack(cols)

    def jacobian_S(self, fd_step: Optional[float] = None) -> NDArray:
        """Central differences of g in (sigma1_1, ..., sigma1_p, sigma2), relative steps."""
        step = fd_step or self.fd_step
        V0, sigma = self.model.V0, self.model.sigma
        cols = []
        for k in range(sigma.size):
            h = step * sigma[k]
            plus, minus = sigma.copy(), sigma.copy()
            plus[k] += h
            minus[k] -= h
            cols.append((self._g(V0, plus) - self._g(V0, minus)) / (2 * h))
        return np.column_stack(cols)

    @cached_property
    def B(self) -> NDArray:
        return self.jacobian_B()

    @cached_property
    def S(self) -> NDArray:
        return self.jacobian_S()

    @cached_property
    def R0(self) -> NDArray:
        return matrix_R0(self.model.V0)

    @cached_property
    def B_inverse(self) -> NDArray:
        """Inverse of B on the range of I_q (x) (I - P0)."""
        p, q = self.model.p, self.model.q
        proj = np.kron(np.eye(q), np.eye(p) - self.model.V0 @ self.model.V0.T)
        left, sing, right_t = np.linalg.svd(proj @ self.B @ proj)
        rank = q * (p - q)
        if sing[rank - 1] * COND_LIMIT < sing[0]:
            raise SingularB(f"restricted B has condition number {sing[0] / sing[rank - 1]:.3g}")
        return right_t[:rank].T @ np.diag(1.0 / sing[:rank]) @ left[:, :rank].T

    @cached_property
    def D(self) -> NDArray:
        return self.R0 @ self.B_inverse

    def _sigma_term(self, if_sigma: Optional[NDArray]) -> NDArray:
        if if_sigma is None:
            return np.zeros(self.model.p * self.model.q)
        return self.S @ np.asarray(if_sigma, dtype=float)

    def _result(self, rhs: NDArray, mode: str, z: NDArray, mc_size: int) -> IFResult:
        matrix = unvec(-self.D @ rhs, self.model.p)
        return IFResult(matrix=matrix, mode=mode, z=z, mc_size=mc_size, fd_step=self.fd_step, seed=self.model.seed)

    def if_fdcm(self, z: NDArray, if_sigma: Optional[NDArray] = None) -> IFResult:
        """Influence of a point mass at z on P under rowwise contamination."""
        m = self.model
        z = np.asarray(z, dtype=float)
        g_atom = g_vector(z, m.V0, m.sigma, m.kernel1, m.kernel2, atom=True)
        return self._result(self._sigma_term(if_sigma) + g_atom, "FDCM", z, self.mc_size)

    def if_ficm(self, z: NDArray, if_sigma: Optional[NDArray] = None, mc_size: Optional[int] = None) -> IFResult:
        """Influence under cellwise contamination: p times the sum of single-coordinate clampings."""
        m = self.model
        z = np.asarray(z, dtype=float)
        size = mc_size or self.mc_size
        draws = self.sample[:size] if size <= self.mc_size else m.sample(size, MC_STREAM)
        total = np.zeros(m.p * m.q)
        for j in range(m.p):
            clamped = draws.copy()
            clamped[:, j] = z[j]
            total += g_vector(clamped, m.V0, m.sigma, m.kernel1, m.kernel2)
        return self._result(self._sigma_term(if_sigma) + m.p * total, "FICM", z, size)

    def asymptotic_covariance(self, mc_size: Optional[int] = None) -> NDArray:
        """Theta = E[vec(IF_FDCM(x)) vec(IF_FDCM(x))^T] with fixed scales."""
        m = self.model
        size = mc_size or self.mc_size
        if size < MIN_MC_SIZE:
            raise MonteCarloBudgetTooSmall(f"{size} draws, need at least {MIN_MC_SIZE}")
        terms, _ = g_terms(m.sample(size, THETA_STREAM), m.V0, m.sigma, m.kernel1, m.kernel2)
        influence = -terms @ self.D.T
        return influence.T @ influence / size

    def step_stability(self) -> Dict[str, float]:
        """Largest relative change of B and S when the finite-difference step is halved."""
        half = self.fd_step / 2

        def rel(a: NDArray, b: NDArray) -> float:
            return float(np.abs(a - b).max() / max(np.abs(a).max(), 1e-300))

        report = {
            "B": rel(self.B, self.jacobian_B(half)),
            "S": rel(self.S, self.jacobian_S(half)),
        }
        logger.info(f"📝 Halved-step change: B {report['B']:.2e}, S {report['S']:.2e}")
        return report

    def grid(self, z1: NDArray, z2: NDArray, mode: str = "fdcm") -> List[Dict[str, float]]:
        """IF over a grid in the first two coordinates (others 0): entry (1,1) and Frobenius norm."""
        rows = []
        for a in z1:
            for b in z2:
                z = np.zeros(self.model.p)
                z[0], z[1] = a, b
                res = self.if_fdcm(z) if mode == "fdcm" else self.if_ficm(z)
                rows.append({"z1": float(a), "z2": float(b), "p11": float(res.matrix[0, 0]), "norm": float(np.linalg.norm(res.matrix))})
        return rows


# ===== Function-style entry points =====

def matrix_B(model: ModelH0, mc_size: int = settings.IF_MC_SIZE, fd_step: float = settings.IF_FD_STEP) -> NDArray:
    return InfluenceLab(model, mc_size, fd_step).B


def matrix_S(model: ModelH0, mc_size: int = settings.IF_MC_SIZE, fd_step: float = settings.IF_FD_STEP) -> NDArray:
    return InfluenceLab(model, mc_size, fd_step).S


def if_fdcm(z: NDArray, model: ModelH0, if_sigma: Optional[NDArray] = None, lab: Optional[InfluenceLab] = None) -> IFResult:
    return (lab or InfluenceLab(model)).if_fdcm(z, if_sigma)


def if_ficm(z: NDArray, model: ModelH0, if_sigma: Optional[NDArray] = None, mc_size: Optional[int] = None, lab: Optional[InfluenceLab] = None) -> IFResult:
    return (lab or InfluenceLab(model)).if_ficm(z, if_sigma, mc_size)


def asymptotic_covariance(model: ModelH0, mc_size: int = settings.IF_MC_SIZE, lab: Optional[InfluenceLab] = None) -> NDArray:
    return (lab or InfluenceLab(model)).asymptotic_covariance(mc_size)

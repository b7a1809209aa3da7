"""
Kernels Module
Bounded rho functions, their derivatives and IRLS weights, the M-estimator of scale and Qn.
Every downweighting decision in the package goes through this module.
"""

import logging
from enum import Enum
from typing import Tuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import optimize
from scipy.spatial import distance

from .errors import AllZero, UnsupportedTuning

logger = logging.getLogger(__name__)

# tanh constants; q1, q2 make psi continuous at b for (b, c) = (1.5, 4)
TANH_B = 1.5
TANH_C = 4.0
TANH_Q1 = 1.540793
TANH_Q2 = 0.8622731

BIWEIGHT_A = 1.548  # E[rho_a(Z)] = 0.5 at the Gaussian
MSCALE_DELTA = 0.5
SCALE_FLOOR = 1e-12

Real = Union[float, NDArray[np.float64]]


class KernelKind(str, Enum):
    TANH = "tanh"
    BIWEIGHT = "biweight"
    QUADRATIC = "quad"


class RhoKernel(BaseModel):
    """A bounded (or quadratic) loss with its tuning constants."""

    model_config = ConfigDict(frozen=True)

    kind: KernelKind = Field(KernelKind.TANH, description="Kernel family")
    b: float = Field(TANH_B, description="tanh inlier bound")
    c: float = Field(TANH_C, description="tanh rejection bound")
    q1: float = Field(TANH_Q1, description="tanh continuity constant")
    q2: float = Field(TANH_Q2, description="tanh continuity constant")
    a: float = Field(BIWEIGHT_A, description="biweight tuning constant")

    @model_validator(mode="after")
    def check_constants(self):
        if self.kind == KernelKind.TANH:
            if (self.b, self.c, self.q1, self.q2) != (TANH_B, TANH_C, TANH_Q1, TANH_Q2):
                raise UnsupportedTuning(
                    f"tanh kernel only supports b={TANH_B}, c={TANH_C}"
                )
        if self.kind == KernelKind.BIWEIGHT and self.a <= 0:
            raise ValueError("biweight constant a must be positive")
        return self

    @property
    def d(self) -> float:
        """Plateau value of the tanh rho."""
        return self.b ** 2 / 2 + (self.q1 / self.q2) * float(
            np.log(np.cosh(self.q2 * (self.c - self.b)))
        )


def tanh_kernel() -> RhoKernel:
    return RhoKernel(kind=KernelKind.TANH)


def biweight_kernel(a: float = BIWEIGHT_A) -> RhoKernel:
    return RhoKernel(kind=KernelKind.BIWEIGHT, a=a)


def quadratic_kernel() -> RhoKernel:
    return RhoKernel(kind=KernelKind.QUADRATIC)


def kernel_from_name(name: str) -> RhoKernel:
    """Build a kernel from its CLI/JSON name ("tanh", "quad", "biweight")."""
    return RhoKernel(kind=KernelKind(name))


def _result(z: ArrayLike, out: NDArray) -> Real:
    return float(out) if np.ndim(z) == 0 else out


def rho(kernel: RhoKernel, z: ArrayLike) -> Real:
    """Evaluate rho elementwise."""
    x = np.asarray(z, dtype=float)
    ax = np.abs(x)
    if kernel.kind == KernelKind.QUADRATIC:
        out = x * x
    elif kernel.kind == KernelKind.BIWEIGHT:
        t = np.minimum(ax / kernel.a, 1.0)
        out = 1.0 - (1.0 - t * t) ** 3
    else:
        b, c, q1, q2, d = kernel.b, kernel.c, kernel.q1, kernel.q2, kernel.d
        mid = d - (q1 / q2) * np.log(np.cosh(q2 * np.clip(c - ax, 0.0, None)))
        out = np.where(ax <= b, 0.5 * x * x, np.where(ax < c, mid, d))
    return _result(z, out)


def psi(kernel: RhoKernel, z: ArrayLike) -> Real:
    """Evaluate psi = rho' elementwise."""
    x = np.asarray(z, dtype=float)
    ax = np.abs(x)
    if kernel.kind == KernelKind.QUADRATIC:
        out = 2.0 * x
    elif kernel.kind == KernelKind.BIWEIGHT:
        t = x / kernel.a
        out = np.where(ax <= kernel.a, 6.0 * x / kernel.a ** 2 * (1.0 - t * t) ** 2, 0.0)
    else:
        b, c, q1, q2 = kernel.b, kernel.c, kernel.q1, kernel.q2
        mid = q1 * np.tanh(q2 * np.clip(c - ax, 0.0, None)) * np.sign(x)
        out = np.where(ax <= b, x, np.where(ax < c, mid, 0.0))
    return _result(z, out)


def weight(kernel: RhoKernel, z: ArrayLike) -> Real:
    """
    IRLS weight w(z) = psi(z)/z with w(0) taken as the limit.

    The quadratic kernel uses w = 1 instead of 2; a constant factor on every
    weight leaves all weighted least-squares solutions unchanged.
    """
    x = np.asarray(z, dtype=float)
    ax = np.abs(x)
    if kernel.kind == KernelKind.QUADRATIC:
        out = np.ones_like(x)
    elif kernel.kind == KernelKind.BIWEIGHT:
        t = x / kernel.a
        out = np.where(ax <= kernel.a, 6.0 / kernel.a ** 2 * (1.0 - t * t) ** 2, 0.0)
    else:
        b, c, q1, q2 = kernel.b, kernel.c, kernel.q1, kernel.q2
        safe = np.where(ax > b, ax, 1.0)
        mid = q1 * np.tanh(q2 * np.clip(c - ax, 0.0, None)) / safe
        out = np.where(ax <= b, 1.0, np.where(ax < c, mid, 0.0))
    return _result(z, out)


def mscale(
    samples: ArrayLike,
    kernel: RhoKernel | None = None,
    delta: float = MSCALE_DELTA,
) -> float:
    """
    M-estimator of scale: the sigma solving mean(rho_a(z / sigma)) = delta.

    Args:
        samples: Values; non-finite entries are dropped
        kernel: Biweight kernel (a = 1.548 when omitted)
        delta: Right-hand side of the estimating equation

    Returns:
        The positive root

    Raises:
        AllZero: If at most a delta fraction of the samples is nonzero
    """
    kernel = kernel or biweight_kernel()
    if kernel.kind != KernelKind.BIWEIGHT:
        raise UnsupportedTuning("mscale needs the biweight kernel")
    z = np.asarray(samples, dtype=float).ravel()
    z = np.abs(z[np.isfinite(z)])
    nonzero = z[z > 0]
    if z.size == 0 or nonzero.size <= delta * z.size:
        raise AllZero(f"{z.size - nonzero.size} of {z.size} samples are zero")

    def excess(sigma: float) -> float:
        return float(np.mean(rho(kernel, z / sigma))) - delta

    lo = nonzero.min() / kernel.a * 1e-3
    hi = z.max() * 1e3
    return float(optimize.brentq(excess, lo, hi, xtol=1e-300, rtol=1e-14, maxiter=500))


def mscale_or_floor(samples: ArrayLike, delta: float = MSCALE_DELTA) -> Tuple[float, bool]:
    """M-scale with the degenerate floor; the flag tells whether the floor was used."""
    try:
        return mscale(samples, delta=delta), False
    except AllZero:
        z = np.asarray(samples, dtype=float)
        z = z[np.isfinite(z)]
        top = float(np.abs(z).max()) if z.size else 0.0
        return SCALE_FLOOR * (top or 1.0), True


def column_mscales(values: NDArray, mask: NDArray) -> Tuple[NDArray, NDArray]:
    """Per-column M-scales over observed cells, floored where degenerate."""
    p = values.shape[1]
    scales = np.empty(p)
    flags = np.zeros(p, dtype=bool)
    for j in range(p):
        scales[j], flags[j] = mscale_or_floor(values[mask[:, j], j])
    if flags.any():
        logger.warning(f"⚠️ Degenerate residual scale floored in columns {np.flatnonzero(flags).tolist()}")
    return scales, flags


# ===== Qn scale =====

QN_CONSTANT = 2.21914
QN_SMALL_SAMPLE = {2: 0.399, 3: 0.994, 4: 0.512, 5: 0.844, 6: 0.611, 7: 0.857, 8: 0.669, 9: 0.872}
QN_MAX_N = 2000


def qn_scale(samples: ArrayLike) -> float:
    """
    Qn scale: the k-th smallest pairwise distance, k = h(h-1)/2 with h = n//2 + 1,
    times the Gaussian consistency constant and its finite-sample correction.

    Samples larger than QN_MAX_N are reduced to evenly spaced order statistics
    so the pairwise table stays small.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    x = x[np.isfinite(x)]
    if x.size > QN_MAX_N:
        x = x[np.linspace(0, x.size - 1, QN_MAX_N).round().astype(int)]
    n = x.size
    if n < 2:
        return 0.0
    h = n // 2 + 1
    k = h * (h - 1) // 2
    kth = float(np.partition(distance.pdist(x[:, None]), k - 1)[k - 1])
    if n in QN_SMALL_SAMPLE:
        factor = QN_SMALL_SAMPLE[n]
    else:
        factor = n / (n + 1.4) if n % 2 else n / (n + 3.8)
    return QN_CONSTANT * factor * kth

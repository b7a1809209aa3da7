"""
Core data containers: masked data, frozen scales, weights and the fitted subspace.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from numpy.typing import NDArray

from .errors import DegenerateColumn, DimensionMismatch, EmptyRow, TooManyMissing
from .kernels import RhoKernel, tanh_kernel


@dataclass(frozen=True)
class MaskedMatrix:
    """n x p data with a boolean observation mask; masked cells are stored as 0."""

    values: NDArray
    mask: NDArray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        mask = np.array(self.mask, dtype=bool)
        if values.ndim != 2 or values.shape != mask.shape:
            raise DimensionMismatch(
                f"values {values.shape} and mask {mask.shape} must be equal 2-d shapes"
            )
        mask &= np.isfinite(values)
        empty = np.flatnonzero(mask.sum(axis=1) == 0)
        if empty.size:
            raise EmptyRow(f"rows without observed cells: {empty[:10].tolist()}")
        values[~mask] = 0.0
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def from_array(cls, x: NDArray) -> "MaskedMatrix":
        """Wrap an array whose NaN entries are missing cells."""
        x = np.asarray(x, dtype=float)
        return cls(np.where(np.isfinite(x), x, 0.0), np.isfinite(x))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def m(self) -> int:
        return int(self.mask.sum())

    def to_array(self) -> NDArray:
        """Values with NaN in missing cells."""
        return np.where(self.mask, self.values, np.nan)

    def require_rank(self, q: int) -> None:
        """Check that every column has at least q + 1 observed cells."""
        short = np.flatnonzero(self.mask.sum(axis=0) < q + 1)
        if short.size:
            raise TooManyMissing(
                f"columns {short.tolist()} have fewer than {q + 1} observed cells"
            )


@dataclass(frozen=True)
class ScalePack:
    """Frozen cellwise scales sigma1 (per column) and the rowwise scale sigma2."""

    sigma1: NDArray
    sigma2: float
    flags: Optional[NDArray] = None

    def __post_init__(self):
        sigma1 = np.asarray(self.sigma1, dtype=float)
        if np.any(sigma1 <= 0) or not self.sigma2 > 0:
            raise DegenerateColumn("scales must be strictly positive")
        flags = np.zeros(sigma1.size, dtype=bool) if self.flags is None else np.asarray(self.flags, dtype=bool)
        object.__setattr__(self, "sigma1", sigma1)
        object.__setattr__(self, "sigma2", float(self.sigma2))
        object.__setattr__(self, "flags", flags)

    @property
    def vector(self) -> NDArray:
        """(sigma1_1, ..., sigma1_p, sigma2)."""
        return np.append(self.sigma1, self.sigma2)

    @classmethod
    def from_vector(cls, sigma: NDArray) -> "ScalePack":
        sigma = np.asarray(sigma, dtype=float)
        return cls(sigma[:-1], float(sigma[-1]))


@dataclass(frozen=True)
class WeightState:
    """Cellwise weights (already multiplied by the mask), row weights and their product."""

    Wc: NDArray
    wr: NDArray
    W: NDArray


@dataclass(frozen=True)
class SubspaceFit:
    V: NDArray
    U: NDArray
    mu: NDArray
    scales: ScalePack
    weights: WeightState
    kernel1: RhoKernel = field(default_factory=tanh_kernel)
    kernel2: RhoKernel = field(default_factory=tanh_kernel)
    eigenvalues: Optional[NDArray] = None
    objective_trace: List[float] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0

    @property
    def q(self) -> int:
        return self.V.shape[1]

    @property
    def P(self) -> NDArray:
        """Projection onto the loading span (exact once V is orthonormal)."""
        Q, _ = np.linalg.qr(self.V)
        return Q @ Q.T

    def fitted(self) -> NDArray:
        """X-hat = U V^T + 1 mu^T."""
        return self.U @ self.V.T + self.mu

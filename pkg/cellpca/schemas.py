from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, field_validator, model_validator

from .config import settings
from .kernels import RhoKernel, quadratic_kernel, tanh_kernel


# ===== Algorithm options =====

class InitConfig(BaseModel):
    """Settings for the robust starting fit."""

    q: int = Field(..., ge=1, description="Target rank")
    univariate_cutoff: float = Field(settings.INIT_CUTOFF, gt=0)
    spherical: bool = True
    max_iter: int = Field(settings.INIT_MAX_ITER, ge=1)
    tol: float = Field(settings.INIT_TOL, gt=0)
    subset_fraction: float = Field(settings.INIT_SUBSET_FRACTION, gt=0.5, le=1.0, description="Share of rows kept by the C-steps")


class IrlsOptions(BaseModel):
    """Settings for the concentration loop."""

    max_iter: int = Field(settings.MAX_ITER, ge=0)
    rel_tol: float = Field(settings.REL_TOL, gt=0)
    zero_weight_cap: float = Field(settings.ZERO_WEIGHT_CAP)
    kernel1: RhoKernel = Field(default_factory=tanh_kernel, description="Cellwise loss")
    kernel2: RhoKernel = Field(default_factory=tanh_kernel, description="Rowwise loss")
    pinv_rcond: float = Field(settings.PINV_RCOND, gt=0)

    @field_validator("zero_weight_cap")
    @classmethod
    def cap_in_unit_interval(cls, v: float) -> float:
        if not 0 < v <= 1:
            raise ValueError("zero_weight_cap must lie in (0, 1]")
        return v

    @classmethod
    def for_mode(cls, mode: str, **kwargs) -> "IrlsOptions":
        """Options for "cellpca", "only-cell" (quadratic rho2) or "only-row" (quadratic rho1)."""
        if mode == "only-cell":
            kwargs.setdefault("kernel2", quadratic_kernel())
        elif mode == "only-row":
            kwargs.setdefault("kernel1", quadratic_kernel())
        elif mode != "cellpca":
            raise ValueError(f"unknown mode {mode!r}")
        return cls(**kwargs)


# ===== Simulation =====

class SimConfig(BaseModel):
    """Monte Carlo study definition, usually read from a JSON file."""

    model_config = ConfigDict(extra="forbid")

    model: str = Field("A09", description="A09 or ALYZ")
    n: int = Field(100, ge=2)
    p: int = Field(20, ge=2)
    q: int = Field(2, ge=1)
    contamination: str = Field("cellwise", description="cellwise | rowwise | mixed | none")
    gamma_c_grid: List[float] = Field(default_factory=lambda: [0.0, 2.0, 4.0, 6.0])
    gamma_r_grid: List[float] = Field(default_factory=lambda: [0.0, 3.0, 6.0, 9.0])
    fraction: float = Field(0.2, ge=0, le=1)
    na_fraction: float = Field(0.0, ge=0, le=1)
    replicates: int = Field(50, ge=0)
    estimators: List[str] = Field(
        default_factory=lambda: ["cpca", "only-cell", "only-row", "cellpca"]
    )
    seed: int = settings.SEED
    strict: bool = False
    n_jobs: int = Field(1, ge=1)

    @field_validator("model")
    @classmethod
    def known_model(cls, v: str) -> str:
        v = v.upper()
        if v not in ("A09", "ALYZ"):
            raise ValueError("model must be A09 or ALYZ")
        return v

    @field_validator("contamination")
    @classmethod
    def known_scheme(cls, v: str) -> str:
        if v not in ("cellwise", "rowwise", "mixed", "none"):
            raise ValueError("contamination must be cellwise, rowwise, mixed or none")
        return v

    @field_validator("gamma_c_grid", "gamma_r_grid")
    @classmethod
    def nonnegative_grid(cls, v: List[float]) -> List[float]:
        if any(g < 0 for g in v):
            raise ValueError("contamination sizes must be nonnegative")
        return v

    @model_validator(mode="after")
    def rank_fits(self):
        if not self.q < min(self.n, self.p):
            raise ValueError("q must be smaller than both n and p")
        return self

    @property
    def gamma_grid(self) -> List[float]:
        """Grid driving the study: cell shifts except for purely rowwise runs."""
        return self.gamma_r_grid if self.contamination == "rowwise" else self.gamma_c_grid


# ===== Fit artifact =====

class ScalesOut(BaseModel):
    sigma1: List[PositiveFloat]
    sigma2: float = Field(..., gt=0)
    flags: List[bool]


class FitDocument(BaseModel):
    """Schema for the JSON fit artifact."""

    schema_version: int = 1
    n: int
    p: int
    q: int
    kernel1: str
    kernel2: str
    V: List[List[float]]
    U: List[List[float]]
    mu: List[float]
    eigenvalues: Optional[List[float]] = None
    scales: ScalesOut
    cell_weights: List[List[float]]
    row_weights: List[float]
    objective_trace: List[float]
    converged: bool
    iterations: int
    column_names: Optional[List[str]] = None


# ===== HTTP payloads =====

class FitRequest(BaseModel):
    """Schema for fitting a matrix posted as JSON (null marks a missing cell)."""

    data: List[List[Optional[float]]] = Field(..., min_length=2)
    rank: int = Field(..., ge=1)
    kernel1: str = "tanh"
    kernel2: str = "tanh"
    max_iter: int = Field(settings.MAX_ITER, ge=0)
    tol: float = Field(settings.REL_TOL, gt=0)

    @field_validator("kernel1", "kernel2")
    @classmethod
    def known_kernel(cls, v: str) -> str:
        if v not in ("tanh", "quad"):
            raise ValueError("kernel must be tanh or quad")
        return v

    @field_validator("data")
    @classmethod
    def rectangular(cls, v: List[List[Optional[float]]]) -> List[List[Optional[float]]]:
        if len({len(row) for row in v}) != 1:
            raise ValueError("all rows must have the same length")
        return v


class PredictRequest(BaseModel):
    """Schema for out-of-sample rows scored against a stored fit."""

    fit: FitDocument
    data: List[List[Optional[float]]] = Field(..., min_length=1)

    @model_validator(mode="after")
    def width_matches_fit(self):
        if any(len(row) != self.fit.p for row in self.data):
            raise ValueError(f"every row must have {self.fit.p} entries")
        return self


class PredictionOut(BaseModel):
    """One predicted row; null fields mean the row could not be scored."""

    scores: Optional[List[float]] = None
    fitted: Optional[List[float]] = None
    imputed: Optional[List[float]] = None
    cell_weights: List[float]

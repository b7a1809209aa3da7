from typing import List

from pydantic_settings import BaseSettings
import os


class Settings(BaseSettings):
    # IRLS
    MAX_ITER: int = 100
    REL_TOL: float = 1e-9
    ZERO_WEIGHT_CAP: float = 0.25
    PINV_RCOND: float = 1e-12
    # initializer
    INIT_CUTOFF: float = 2.57
    INIT_MAX_ITER: int = 50
    INIT_TOL: float = 1e-8
    INIT_SUBSET_FRACTION: float = 0.75
    # single-row robust regression (prediction, influence)
    INNER_MAX_ITER: int = 100
    INNER_TOL: float = 1e-10
    # diagnostics and influence
    CUTOFF_SIMS: int = 20
    IF_MC_SIZE: int = 200000
    IF_FD_STEP: float = 1e-4
    SEED: int = 0
    LOG_LEVEL: str = "INFO"
    APP_HOST: str = "0.0.0.0"
    APP_PORT: int = 8000
    CORS_ORIGINS: List[str] = ["http://localhost:3000"]

    model_config = {
        "env_prefix": "CELLPCA_",
        "env_file": os.path.join(
            os.path.dirname(os.path.dirname(__file__)), ".env"
        ),
        "env_file_encoding": "utf-8",
        "extra": "ignore",
    }


settings = Settings()

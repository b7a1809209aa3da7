from typing import List, Optional

import numpy as np
from fastapi import APIRouter

from .diagnostics import predict_many
from .fit_service import fit_cellpca
from .io_utils import document_to_fit, fit_to_document, prediction_payload
from .kernels import kernel_from_name
from .models import MaskedMatrix
from .schemas import FitDocument, FitRequest, IrlsOptions, PredictionOut, PredictRequest

import logging

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/api")


def _as_array(rows: List[List[Optional[float]]]) -> np.ndarray:
    """JSON nulls become NaN, i.e. missing cells."""
    return np.array([[np.nan if v is None else v for v in row] for row in rows], dtype=float)


def _predictions(payload: PredictRequest):
    fit = document_to_fit(payload.fit)
    data = _as_array(payload.data)
    return predict_many(data, np.isfinite(data), fit)


@router.post("/fit", response_model=FitDocument)
def fit_endpoint(payload: FitRequest):
    """Fit a robust subspace to a posted matrix."""
    X = MaskedMatrix.from_array(_as_array(payload.data))
    opts = IrlsOptions(
        max_iter=payload.max_iter,
        rel_tol=payload.tol,
        kernel1=kernel_from_name(payload.kernel1),
        kernel2=kernel_from_name(payload.kernel2),
    )
    fit = fit_cellpca(X, payload.rank, opts)
    logger.info(f"✅ /fit: {X.n}x{X.p}, rank {payload.rank}, converged={fit.converged}")
    return fit_to_document(fit)


@router.post("/predict", response_model=List[PredictionOut])
def predict_endpoint(payload: PredictRequest):
    """Scores, fitted and imputed rows for new data under a stored fit."""
    return prediction_payload(_predictions(payload))


@router.post("/impute")
def impute_endpoint(payload: PredictRequest):
    """Imputed rows; rows that cannot be scored are echoed with nulls for missing cells."""
    rows = []
    for original, pred in zip(payload.data, _predictions(payload)):
        rows.append(pred.imputed.tolist() if pred.available else original)
    return {"imputed": rows}

"""
IO Utilities
CSV ingestion with missing-value tokens, the JSON fit document, and CSV/JSON
writers for curves, predictions, diagnostics, influence grids and study results.
"""

import csv
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray
from pydantic import ValidationError

from .diagnostics import CellmapGrid, OutlierMapRecord, PredictionResult
from .errors import DegenerateColumn, EmptyFile, InvalidFitDocument, ParseError, RaggedRows
from .kernels import kernel_from_name
from .models import MaskedMatrix, ScalePack, SubspaceFit, WeightState
from .postprocess import RankCurve
from .schemas import FitDocument, PredictionOut, ScalesOut
from .simulation import SimResult

logger = logging.getLogger(__name__)

NA_TOKENS = ("", "NA", "NaN")


@dataclass(frozen=True)
class IngestionReport:
    n: int
    p: int
    na_count: int
    dropped_rows: List[int] = field(default_factory=list)
    constant_columns: List[bool] = field(default_factory=list)
    column_names: Optional[List[str]] = None


def _parse(token: str, na_tokens: Sequence[str]) -> Optional[float]:
    """NA tokens give None; anything else must be a finite number."""
    token = token.strip()
    if token in na_tokens:
        return None
    value = float(token)
    if not math.isfinite(value):
        raise ValueError(f"non-finite value {token!r}")
    return value


def _looks_like_header(row: List[str], na_tokens: Sequence[str]) -> bool:
    for token in row:
        token = token.strip()
        if token in na_tokens:
            continue
        try:
            float(token)
        except ValueError:
            return True
    return False


# ===== CSV ingestion =====

def read_csv(
    path: str,
    na_tokens: Sequence[str] = NA_TOKENS,
    header: Optional[bool] = None,
    delimiter: str = ",",
) -> Tuple[MaskedMatrix, IngestionReport]:
    """
    Read a numeric matrix; NA tokens become unobserved cells and all-NA rows are dropped.

    header=None detects a header from a first row holding a non-numeric token.

    Raises:
        EmptyFile: If no data row is present
        RaggedRows: If rows have different field counts
        ParseError: If a token is neither numeric nor an NA token
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh, delimiter=delimiter) if row]
    if not rows:
        raise EmptyFile(f"{path} is empty")

    names = None
    if header or (header is None and _looks_like_header(rows[0], na_tokens)):
        names = [name.strip() for name in rows[0]]
        rows = rows[1:]
    if not rows:
        raise EmptyFile(f"{path} has a header but no data rows")
    widths = {len(row) for row in rows}
    if len(widths) != 1 or (names is not None and len(names) not in widths):
        raise RaggedRows(f"{path} has rows of lengths {sorted(widths)}")

    offset = 1 if names is not None else 0
    data = np.full((len(rows), len(rows[0])), np.nan)
    for i, row in enumerate(rows):
        for j, token in enumerate(row):
            try:
                value = _parse(token, na_tokens)
            except ValueError:
                raise ParseError(i + offset, j, token) from None
            if value is not None:
                data[i, j] = value

    observed = np.isfinite(data)
    keep = observed.any(axis=1)
    dropped = np.flatnonzero(~keep).tolist()
    if dropped:
        logger.warning(f"⚠️ Dropped {len(dropped)} all-NA rows: {dropped[:10]}")
    data, observed = data[keep], observed[keep]
    if data.shape[0] == 0:
        raise EmptyFile(f"{path} has no row with an observed value")

    constant = [
        bool(np.unique(data[observed[:, j], j]).size <= 1) for j in range(data.shape[1])
    ]
    report = IngestionReport(
        n=data.shape[0],
        p=data.shape[1],
        na_count=int((~observed).sum()),
        dropped_rows=dropped,
        constant_columns=constant,
        column_names=names,
    )
    logger.info(f"📥 Read {report.n}x{report.p} matrix from {path} ({report.na_count} NA cells)")
    return MaskedMatrix.from_array(data), report


def _token(value: float) -> str:
    return "NA" if not math.isfinite(value) else repr(float(value))


def write_matrix_csv(
    path: str, values: NDArray, mask: Optional[NDArray] = None, column_names: Optional[List[str]] = None
) -> None:
    """Write a matrix with NA in unobserved cells; floats use their shortest round-trip form."""
    values = np.asarray(values, dtype=float)
    if mask is not None:
        values = np.where(mask, values, np.nan)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if column_names:
            writer.writerow(column_names)
        for row in values:
            writer.writerow([_token(v) for v in row])


def write_records_csv(path: str, rows: Iterable[Mapping], fieldnames: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(fieldnames))
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def write_json(path: str, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)


# ===== Fit document =====

def fit_to_document(fit: SubspaceFit, column_names: Optional[List[str]] = None) -> FitDocument:
    return FitDocument(
        n=fit.U.shape[0],
        p=fit.V.shape[0],
        q=fit.q,
        kernel1=fit.kernel1.kind.value,
        kernel2=fit.kernel2.kind.value,
        V=fit.V.tolist(),
        U=fit.U.tolist(),
        mu=fit.mu.tolist(),
        eigenvalues=None if fit.eigenvalues is None else np.asarray(fit.eigenvalues).tolist(),
        scales=ScalesOut(
            sigma1=fit.scales.sigma1.tolist(),
            sigma2=fit.scales.sigma2,
            flags=fit.scales.flags.tolist(),
        ),
        cell_weights=fit.weights.Wc.tolist(),
        row_weights=fit.weights.wr.tolist(),
        objective_trace=[float(v) for v in fit.objective_trace],
        converged=fit.converged,
        iterations=fit.iterations,
        column_names=column_names,
    )


def document_to_fit(doc: FitDocument) -> SubspaceFit:
    Wc = np.array(doc.cell_weights, dtype=float).reshape(doc.n, doc.p)
    wr = np.array(doc.row_weights, dtype=float)
    return SubspaceFit(
        V=np.array(doc.V, dtype=float).reshape(doc.p, doc.q),
        U=np.array(doc.U, dtype=float).reshape(doc.n, doc.q),
        mu=np.array(doc.mu, dtype=float),
        scales=ScalePack(np.array(doc.scales.sigma1), doc.scales.sigma2, np.array(doc.scales.flags)),
        weights=WeightState(Wc=Wc, wr=wr, W=Wc * wr[:, None]),
        kernel1=kernel_from_name(doc.kernel1),
        kernel2=kernel_from_name(doc.kernel2),
        eigenvalues=None if doc.eigenvalues is None else np.array(doc.eigenvalues),
        objective_trace=list(doc.objective_trace),
        converged=doc.converged,
        iterations=doc.iterations,
    )


def write_fit(fit: SubspaceFit, path: str, column_names: Optional[List[str]] = None) -> None:
    """Store a fit as JSON; numbers are written in shortest round-trip form."""
    write_json(path, fit_to_document(fit, column_names).model_dump())
    logger.info(f"💾 Fit written to {path}")


def read_fit(path: str) -> Tuple[SubspaceFit, FitDocument]:
    """
    Load a fit written by write_fit.

    Raises:
        InvalidFitDocument: If the file is not JSON or does not describe a consistent fit
    """
    with open(path, encoding="utf-8") as fh:
        try:
            doc = FitDocument.model_validate(json.load(fh))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise InvalidFitDocument(f"{path} is not valid JSON: {exc}") from None
        except ValidationError as exc:
            raise InvalidFitDocument(f"{path} is not a fit document: {exc.error_count()} schema errors") from None
    try:
        return document_to_fit(doc), doc
    except (ValueError, DegenerateColumn) as exc:
        raise InvalidFitDocument(f"{path} holds inconsistent arrays: {exc}") from None


# ===== Result tables =====

def write_rank_curve(curve: RankCurve, path: str) -> None:
    rows = [{"rank": 0, "nu": repr(curve.nu0), "explained": repr(0.0), "selected": ""}]
    rows += [
        {"rank": r, "nu": repr(v), "explained": repr(e), "selected": int(r == curve.selected)}
        for r, v, e in zip(curve.ranks, curve.nu, curve.explained)
    ]
    write_records_csv(path, rows, ["rank", "nu", "explained", "selected"])


def prediction_payload(preds: List[PredictionResult]) -> List[dict]:
    def listed(a: Optional[NDArray]) -> Optional[List[float]]:
        return None if a is None else np.asarray(a, dtype=float).tolist()

    return [
        PredictionOut(
            scores=listed(r.scores),
            fitted=listed(r.fitted),
            imputed=listed(r.imputed),
            cell_weights=listed(r.cell_weights),
        ).model_dump()
        for r in preds
    ]


def write_cellmap_csv(grid: CellmapGrid, path: str) -> None:
    """Long format: one line per cell with its standardized residual and category."""
    n, p = grid.category.shape
    rows = (
        {
            "row": i,
            "col": j,
            "residual": _token(grid.residuals[i, j]),
            "category": grid.category[i, j],
            "intensity": repr(float(grid.intensity[i, j])),
            "row_shade": repr(float(grid.row_shade[i])),
        }
        for i in range(n)
        for j in range(p)
    )
    write_records_csv(path, rows, ["row", "col", "residual", "category", "intensity", "row_shade"])


def write_outlier_map_csv(records: List[OutlierMapRecord], path: str) -> None:
    fields = ["index", "score_distance", "residual_norm", "row_weight", "point_size", "cutoff_sd", "cutoff_res", "label"]
    rows = []
    for rec in records:
        row = asdict(rec)
        row["label"] = rec.label.value
        rows.append(row)
    write_records_csv(path, rows, fields)


def write_influence_csv(rows: List[dict], path: str) -> None:
    write_records_csv(path, rows, ["z1", "z2", "p11", "norm"])


def write_study(result: SimResult, path: str) -> str:
    """Long-format replicate table at path and the median summary next to it; returns the summary path."""
    fields = ["model", "scheme", "estimator", "gamma", "replicate", "angle", "mse", "error"]
    write_records_csv(path, (asdict(r) for r in result.records), fields)
    summary = os.path.splitext(path)[0] + "_summary.json"
    write_json(summary, result.medians())
    return summary

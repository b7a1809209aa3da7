"""
Command-line surface: fit, rank, impute, predict, diagnose, simulate, influence.
Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 I/O failure.
"""

import argparse
import logging
import os
import sys
from typing import List, Optional

import numpy as np
from pydantic import ValidationError

from .config import settings
from .diagnostics import predict_many
from .errors import InputError, NumericalError
from .fit_service import diagnose, fit_cellpca
from .influence import InfluenceLab, ModelH0
from .io_utils import (
    prediction_payload,
    read_csv,
    read_fit,
    write_cellmap_csv,
    write_fit,
    write_influence_csv,
    write_json,
    write_matrix_csv,
    write_outlier_map_csv,
    write_rank_curve,
    write_study,
)
from .kernels import kernel_from_name
from .postprocess import select_rank
from .render import render_cellmap, render_if_surface, render_outlier_map
from .schemas import IrlsOptions, SimConfig
from .simulation import a09_covariance, run_study

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


def parse_grid(text: str) -> np.ndarray:
    """"lo:hi:num" -> num evenly spaced points."""
    try:
        lo, hi, num = text.split(":")
        return np.linspace(float(lo), float(hi), int(num))
    except ValueError:
        raise InputError(f"grid must look like lo:hi:num, got {text!r}") from None


# ===== Commands =====

def cmd_fit(args) -> None:
    X, report = read_csv(args.input)
    opts = IrlsOptions(
        max_iter=args.max_iter,
        rel_tol=args.tol,
        kernel1=kernel_from_name(args.kernel1),
        kernel2=kernel_from_name(args.kernel2),
    )
    logger.info(f"📝 Seed {args.seed} recorded; the fit itself draws no random numbers")
    fit = fit_cellpca(X, args.rank, opts)
    write_fit(fit, args.out, report.column_names)
    print(f"✅ Fitted rank {args.rank} on {report.n}x{report.p} data, converged={fit.converged}")


def cmd_rank(args) -> None:
    X, _ = read_csv(args.input)
    curve = select_rank(X, args.max_rank, args.threshold)
    write_rank_curve(curve, args.out)
    print(f"✅ Selected rank: {curve.selected}")


def cmd_impute(args) -> None:
    X, report = read_csv(args.input)
    fit, _ = read_fit(args.fit)
    preds = predict_many(X.values, X.mask, fit)
    out = X.to_array()
    for i, pred in enumerate(preds):
        if pred.available:
            out[i] = pred.imputed
    write_matrix_csv(args.out, out, column_names=report.column_names)
    print(f"✅ Imputed {sum(p.available for p in preds)} of {len(preds)} rows")


def cmd_predict(args) -> None:
    X, _ = read_csv(args.input)
    fit, _ = read_fit(args.fit)
    write_json(args.out, prediction_payload(predict_many(X.values, X.mask, fit)))
    print(f"✅ Predictions written to {args.out}")


def cmd_diagnose(args) -> None:
    X, report_in = read_csv(args.input)
    fit, _ = read_fit(args.fit)
    report = diagnose(X, fit, args.cutoff_sims, args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    path = lambda name: os.path.join(args.out_dir, name)  # noqa: E731
    write_matrix_csv(path("standardized_residuals.csv"), report.standardized, column_names=report_in.column_names)
    write_cellmap_csv(report.grid, path("cellmap.csv"))
    write_outlier_map_csv(report.records, path("outlier_map.csv"))
    write_json(path("cutoffs.json"), {"cutoff_sd": report.cutoff_sd, "cutoff_res": report.cutoff_res})
    render_cellmap(report.grid, path("cellmap.svg"), column_names=report_in.column_names)
    render_outlier_map(report.records, path("outlier_map.svg"))
    flagged = sum(r.label.value != "regular" for r in report.records)
    print(f"✅ Diagnostics in {args.out_dir}: {flagged} flagged rows")


def cmd_simulate(args) -> None:
    with open(args.config, encoding="utf-8") as fh:
        cfg = SimConfig.model_validate_json(fh.read())
    summary = write_study(run_study(cfg), args.out)
    print(f"✅ Study written to {args.out} (medians in {summary})")


def cmd_influence(args) -> None:
    if args.cov == "a09":
        cov = a09_covariance(args.p)
    else:
        X, _ = read_csv(args.cov)
        cov = X.to_array()
        if cov.shape != (args.p, args.p) or np.isnan(cov).any():
            raise InputError(f"{args.cov} must hold a complete {args.p}x{args.p} covariance")
    model = ModelH0.from_covariance(cov, args.q, mc_size=args.mc_size, seed=args.seed, refine=args.refine)
    lab = InfluenceLab(model, args.mc_size)
    grid = parse_grid(args.grid)
    rows = lab.grid(grid, grid, args.model)
    write_influence_csv(rows, args.out)
    if args.svg:
        render_if_surface(rows, args.svg)
    print(f"✅ {args.model.upper()} influence on {grid.size}x{grid.size} grid written to {args.out}")


# ===== Parser =====

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cellpca", description="Cellwise and rowwise robust PCA")
    parser.add_argument("--log-level", default=settings.LOG_LEVEL)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="Fit a robust subspace")
    p.add_argument("--input", required=True)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--kernel1", choices=["tanh", "quad"], default="tanh")
    p.add_argument("--kernel2", choices=["tanh", "quad"], default="tanh")
    p.add_argument("--max-iter", type=int, default=settings.MAX_ITER)
    p.add_argument("--tol", type=float, default=settings.REL_TOL)
    p.add_argument("--seed", type=int, default=settings.SEED)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("rank", help="Explained-objective curve and rank choice")
    p.add_argument("--input", required=True)
    p.add_argument("--max-rank", type=int, required=True)
    p.add_argument("--threshold", type=float, default=0.8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("impute", help="Impute outlying and missing cells")
    p.add_argument("--input", required=True)
    p.add_argument("--fit", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("predict", help="Scores, fitted and imputed rows for new data")
    p.add_argument("--input", required=True)
    p.add_argument("--fit", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("diagnose", help="Cellmap and outlier map")
    p.add_argument("--input", required=True)
    p.add_argument("--fit", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--cutoff-sims", type=int, default=settings.CUTOFF_SIMS)
    p.add_argument("--seed", type=int, default=settings.SEED)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("simulate", help="Monte Carlo study from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("influence", help="Influence function of the projection matrix on a grid")
    p.add_argument("--model", choices=["fdcm", "ficm"], required=True)
    p.add_argument("--cov", required=True, help="a09 or a CSV covariance file")
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--q", type=int, required=True)
    p.add_argument("--grid", required=True, help="lo:hi:num")
    p.add_argument("--out", required=True)
    p.add_argument("--mc-size", type=int, default=settings.IF_MC_SIZE)
    p.add_argument("--seed", type=int, default=settings.SEED)
    p.add_argument("--refine", action="store_true")
    p.add_argument("--svg", default=None, help="also render the surface")
    p.set_defaults(func=cmd_influence)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO))
    try:
        args.func(args)
    except (InputError, ValidationError) as exc:
        logger.error(f"❌ Invalid input: {exc}")
        return EXIT_INPUT
    except (NumericalError, np.linalg.LinAlgError) as exc:
        logger.error(f"❌ Numerical failure: {exc}")
        return EXIT_NUMERICAL
    except OSError as exc:
        logger.error(f"❌ I/O failure: {exc}")
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

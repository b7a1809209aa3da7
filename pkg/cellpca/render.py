"""
SVG rendering of residual cellmaps, enhanced outlier maps and influence surfaces.
Output is byte-deterministic for identical input.
"""

import logging
from typing import Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import numpy as np
from matplotlib import colors as mcolors
from matplotlib.figure import Figure
from matplotlib.patches import Circle, Rectangle
from numpy.typing import NDArray

from .diagnostics import CellCategory, CellmapGrid, OutlierMapRecord

logger = logging.getLogger(__name__)

REGULAR = "#ffff00"
MISSING = "#ffffff"
POSITIVE_RAMP = ("#ffa500", "#8b0000")  # orange to dark red
NEGATIVE_RAMP = ("#9370db", "#00008b")  # purple to dark blue
MAX_DEFAULT_COLUMNS = 60
SELECTED_COLUMNS = 20

matplotlib.rcParams["svg.hashsalt"] = "cellpca"
matplotlib.rcParams["svg.fonttype"] = "none"


def _blend(ramp, t: float) -> str:
    lo, hi = (np.array(mcolors.to_rgb(c)) for c in ramp)
    return mcolors.to_hex(lo + float(np.clip(t, 0.0, 1.0)) * (hi - lo))


def cell_colors(grid: CellmapGrid) -> NDArray:
    """Hex fill per cell: yellow regular, white missing, intensity ramps for outliers."""
    out = np.full(grid.category.shape, REGULAR, dtype=object)
    for (i, j), cat in np.ndenumerate(grid.category):
        if cat == CellCategory.MISSING.value:
            out[i, j] = MISSING
        elif cat == CellCategory.POSITIVE.value:
            out[i, j] = _blend(POSITIVE_RAMP, grid.intensity[i, j])
        elif cat == CellCategory.NEGATIVE.value:
            out[i, j] = _blend(NEGATIVE_RAMP, grid.intensity[i, j])
    return out


def gray(weight: float) -> str:
    """Black at weight 0, white at weight 1."""
    return mcolors.to_hex((float(np.clip(weight, 0.0, 1.0)),) * 3)


def default_columns(grid: CellmapGrid) -> List[int]:
    """All columns, or the 20 with the largest median |residual| when p > 60."""
    p = grid.category.shape[1]
    if p <= MAX_DEFAULT_COLUMNS:
        return list(range(p))
    with np.errstate(all="ignore"):
        med = np.nanmedian(np.abs(grid.residuals), axis=0)
    med = np.where(np.isfinite(med), med, -np.inf)
    top = np.argsort(-med, kind="stable")[:SELECTED_COLUMNS]
    return sorted(top.tolist())


def _save(fig: Figure, path: str) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    logger.info(f"🖼️ Wrote {path}")


def render_cellmap(
    grid: CellmapGrid,
    path: str,
    rows: Optional[Sequence[int]] = None,
    cols: Optional[Sequence[int]] = None,
    column_names: Optional[List[str]] = None,
) -> None:
    rows = list(range(grid.category.shape[0])) if rows is None else list(rows)
    cols = default_columns(grid) if cols is None else list(cols)
    fills = cell_colors(grid)
    width = min(2 + 0.35 * len(cols), 40)
    height = min(1.5 + 0.3 * len(rows), 60)
    fig = Figure(figsize=(width, height))
    ax = fig.add_subplot()
    for y, i in enumerate(rows):
        for x, j in enumerate(cols):
            ax.add_patch(Rectangle((x, -y - 1), 1, 1, facecolor=fills[i, j], edgecolor="#cccccc", linewidth=0.3))
        ax.add_patch(Circle((-0.7, -y - 0.5), 0.35, facecolor=gray(1.0 - grid.row_shade[i]), edgecolor="black", linewidth=0.3))
    ax.set_xlim(-1.3, len(cols))
    ax.set_ylim(-len(rows), 0)
    ax.set_aspect("equal")
    ax.set_xticks(np.arange(len(cols)) + 0.5)
    ax.set_xticklabels([column_names[j] if column_names else str(j + 1) for j in cols], rotation=90)
    ax.set_yticks(-np.arange(len(rows)) - 0.5)
    ax.set_yticklabels([str(i + 1) for i in rows])
    ax.tick_params(length=0)
    for side in ax.spines.values():
        side.set_visible(False)
    _save(fig, path)


def render_outlier_map(records: List[OutlierMapRecord], path: str) -> None:
    """Score distance against residual norm; dotted cutoffs, size from cell weights, fill from row weight."""
    fig = Figure(figsize=(6, 5))
    ax = fig.add_subplot()
    if records:
        sd = np.array([r.score_distance for r in records])
        res = np.array([r.residual_norm for r in records])
        sizes = 10 + 150 * np.array([r.point_size for r in records])
        fills = [gray(r.row_weight) for r in records]
        ax.scatter(sd, res, s=sizes, c=fills, edgecolors="black", linewidths=0.4)
        ax.axvline(records[0].cutoff_sd, linestyle=":", color="black")
        ax.axhline(records[0].cutoff_res, linestyle=":", color="black")
    ax.set_xlabel("Score distance")
    ax.set_ylabel("Standardized residual norm")
    _save(fig, path)


def render_if_surface(rows: List[Dict[str, float]], path: str, value: str = "p11") -> None:
    """3-d surface of an influence grid exported by InfluenceLab.grid."""
    z1 = np.unique([r["z1"] for r in rows])
    z2 = np.unique([r["z2"] for r in rows])
    surface = np.full((z2.size, z1.size), np.nan)
    for r in rows:
        surface[np.searchsorted(z2, r["z2"]), np.searchsorted(z1, r["z1"])] = r[value]
    fig = Figure(figsize=(6, 5))
    ax = fig.add_subplot(projection="3d")
    A, B = np.meshgrid(z1, z2)
    ax.plot_surface(A, B, surface, cmap="viridis", linewidth=0)
    ax.set_xlabel("z1")
    ax.set_ylabel("z2")
    ax.set_zlabel(value)
    _save(fig, path)

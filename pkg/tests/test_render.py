import numpy as np

from cellpca.diagnostics import OutlierClass, OutlierMapRecord, cellmap
from cellpca.render import (
    REGULAR,
    cell_colors,
    default_columns,
    gray,
    render_cellmap,
    render_if_surface,
    render_outlier_map,
)


def _grid(r, mask=None):
    r = np.asarray(r, dtype=float)
    mask = np.ones_like(r, dtype=bool) if mask is None else mask
    return cellmap(r, mask, np.ones(r.shape[0]))


def test_all_regular_cells_are_yellow():
    fills = cell_colors(_grid(np.zeros((4, 3))))
    assert fills.size == 12
    assert np.all(fills == REGULAR)


def test_single_extreme_cell_is_darkest_red():
    r = np.zeros((3, 3))
    r[1, 2] = 7.0
    r[0, 0] = -7.0
    fills = cell_colors(_grid(r))
    assert (fills == "#8b0000").sum() == 1
    assert fills[1, 2] == "#8b0000"
    assert fills[0, 0] == "#00008b"


def test_missing_cells_are_white():
    mask = np.ones((2, 2), dtype=bool)
    mask[0, 1] = False
    fills = cell_colors(_grid(np.zeros((2, 2)), mask))
    assert fills[0, 1] == "#ffffff"


def test_gray_scale_ends():
    assert gray(0.0) == "#000000"
    assert gray(1.0) == "#ffffff"


def test_default_columns_limit_wide_grids():
    r = np.zeros((5, 80))
    r[:, 70:] = 3.0
    cols = default_columns(_grid(r))
    assert len(cols) == 20
    assert set(range(70, 80)) <= set(cols)
    assert default_columns(_grid(np.zeros((2, 10)))) == list(range(10))


def test_cellmap_svg_is_byte_deterministic(tmp_path):
    r = np.zeros((4, 3))
    r[2, 1] = 4.0
    grid = _grid(r)
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    render_cellmap(grid, str(a))
    render_cellmap(grid, str(b))
    assert a.read_bytes() == b.read_bytes()
    assert a.read_text().lstrip().startswith("<?xml")


def test_outlier_map_with_and_without_records(tmp_path):
    empty = tmp_path / "empty.svg"
    render_outlier_map([], str(empty))
    assert "<svg" in empty.read_text()
    records = [
        OutlierMapRecord(0, 1.0, 2.0, 1.0, 0.0, 3.0, 4.0, OutlierClass.REGULAR),
        OutlierMapRecord(1, 5.0, 9.0, 0.0, 0.8, 3.0, 4.0, OutlierClass.BAD_LEVERAGE),
    ]
    full = tmp_path / "full.svg"
    render_outlier_map(records, str(full))
    assert full.stat().st_size > empty.stat().st_size


def test_if_surface(tmp_path):
    rows = [{"z1": a, "z2": b, "p11": a * b, "norm": abs(a * b)} for a in (-1.0, 0.0, 1.0) for b in (-1.0, 1.0)]
    path = tmp_path / "if.svg"
    render_if_surface(rows, str(path))
    assert path.exists()

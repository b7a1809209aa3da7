import json

import numpy as np
import pytest

from cellpca.cli import EXIT_INPUT, EXIT_IO, EXIT_OK, main, parse_grid
from cellpca.errors import InputError
from cellpca.io_utils import write_matrix_csv

from conftest import low_rank


@pytest.fixture
def data_csv(tmp_path):
    X, _, _ = low_rank(50, 6, 2, seed=40)
    X[4, 1] += 15.0
    X[9, 3] = np.nan
    path = tmp_path / "x.csv"
    write_matrix_csv(str(path), X, column_names=[f"v{j}" for j in range(6)])
    return path


@pytest.fixture
def fit_json(tmp_path, data_csv):
    out = tmp_path / "fit.json"
    assert main(["fit", "--input", str(data_csv), "--rank", "2", "--out", str(out)]) == EXIT_OK
    return out


def test_fit_writes_a_fit_document(fit_json):
    doc = json.loads(fit_json.read_text())
    assert doc["q"] == 2 and doc["p"] == 6
    assert doc["column_names"][0] == "v0"


def test_impute_fills_missing_cells(tmp_path, data_csv, fit_json):
    out = tmp_path / "imp.csv"
    assert main(["impute", "--input", str(data_csv), "--fit", str(fit_json), "--out", str(out)]) == EXIT_OK
    lines = out.read_text().splitlines()
    assert len(lines) == 51
    assert "NA" not in lines[10]


def test_predict_writes_one_entry_per_row(tmp_path, data_csv, fit_json):
    out = tmp_path / "pred.json"
    assert main(["predict", "--input", str(data_csv), "--fit", str(fit_json), "--out", str(out)]) == EXIT_OK
    preds = json.loads(out.read_text())
    assert len(preds) == 50
    assert len(preds[0]["scores"]) == 2


def test_diagnose_writes_figures_and_tables(tmp_path, data_csv, fit_json):
    out_dir = tmp_path / "diag"
    args = ["diagnose", "--input", str(data_csv), "--fit", str(fit_json), "--out-dir", str(out_dir), "--cutoff-sims", "2"]
    assert main(args) == EXIT_OK
    for name in ("cellmap.svg", "outlier_map.svg", "cellmap.csv", "outlier_map.csv", "cutoffs.json"):
        assert (out_dir / name).exists()


def test_rank_command(tmp_path, data_csv):
    out = tmp_path / "curve.csv"
    assert main(["rank", "--input", str(data_csv), "--max-rank", "2", "--threshold", "0.8", "--out", str(out)]) == EXIT_OK
    assert out.read_text().startswith("rank,nu,explained,selected")


def test_simulate_command(tmp_path):
    cfg = tmp_path / "sim.json"
    cfg.write_text(json.dumps({"n": 40, "p": 6, "q": 1, "gamma_c_grid": [0.0], "replicates": 1, "estimators": ["cpca"]}))
    out = tmp_path / "results.csv"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    assert out.exists()
    assert (tmp_path / "results_summary.json").exists()


def test_influence_command(tmp_path):
    out = tmp_path / "if.csv"
    args = ["influence", "--model", "fdcm", "--cov", "a09", "--p", "2", "--q", "1", "--grid=-2:2:3", "--out", str(out), "--mc-size", "2000"]
    assert main(args) == EXIT_OK
    assert len(out.read_text().splitlines()) == 1 + 9


def test_exit_codes(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\n3,x\n")
    assert main(["fit", "--input", str(bad), "--rank", "1", "--out", str(tmp_path / "f.json")]) == EXIT_INPUT
    missing = tmp_path / "nope.csv"
    assert main(["fit", "--input", str(missing), "--rank", "1", "--out", str(tmp_path / "f.json")]) == EXIT_IO
    sim = tmp_path / "sim.json"
    sim.write_text(json.dumps({"model": "XYZ"}))
    assert main(["simulate", "--config", str(sim), "--out", str(tmp_path / "r.csv")]) == EXIT_INPUT


def test_parse_grid():
    assert parse_grid("-1:1:3").tolist() == [-1.0, 0.0, 1.0]
    with pytest.raises(InputError):
        parse_grid("1:2")


def test_corrupt_fit_file_is_an_input_error(tmp_path, data_csv, fit_json):
    corrupt = tmp_path / "corrupt.json"
    corrupt.write_text(fit_json.read_text()[: len(fit_json.read_text()) // 2])
    out = tmp_path / "imp.csv"
    assert main(["impute", "--input", str(data_csv), "--fit", str(corrupt), "--out", str(out)]) == EXIT_INPUT
    assert not out.exists()
    wrong = tmp_path / "wrong.json"
    wrong.write_text(json.dumps({"q": 2}))
    assert main(["predict", "--input", str(data_csv), "--fit", str(wrong), "--out", str(tmp_path / "p.json")]) == EXIT_INPUT

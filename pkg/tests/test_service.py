import numpy as np
import pytest
from fastapi.testclient import TestClient

from cellpca.main import app

from conftest import low_rank

client = TestClient(app)


@pytest.fixture(scope="module")
def matrix():
    X, _, _ = low_rank(40, 5, 1, seed=50)
    rows = X.tolist()
    rows[3][2] = None
    return rows


@pytest.fixture(scope="module")
def fit_doc(matrix):
    response = client.post("/api/fit", json={"data": matrix, "rank": 1})
    assert response.status_code == 200
    return response.json()


def test_health():
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json() == {"status": "ok"}


def test_fit_returns_a_document(fit_doc):
    assert fit_doc["schema_version"] == 1
    assert np.array(fit_doc["V"]).shape == (5, 1)
    assert len(fit_doc["row_weights"]) == 40


def test_predict_and_impute(fit_doc, matrix):
    payload = {"fit": fit_doc, "data": [matrix[3], [None] * 5]}
    preds = client.post("/api/predict", json=payload).json()
    assert len(preds[0]["scores"]) == 1
    assert preds[1]["scores"] is None
    imputed = client.post("/api/impute", json=payload).json()["imputed"]
    assert imputed[0][2] is not None
    assert imputed[1] == [None] * 5


def test_ragged_matrix_is_rejected():
    response = client.post("/api/fit", json={"data": [[1.0, 2.0], [3.0]], "rank": 1})
    assert response.status_code == 422


def test_empty_row_maps_to_422():
    response = client.post("/api/fit", json={"data": [[1.0, 2.0, 3.0], [None, None, None], [2.0, 1.0, 0.0]], "rank": 1})
    assert response.status_code == 422
    assert response.json()["error"] == "EmptyRow"


def test_prediction_width_is_checked(fit_doc):
    response = client.post("/api/predict", json={"fit": fit_doc, "data": [[1.0, 2.0]]})
    assert response.status_code == 422

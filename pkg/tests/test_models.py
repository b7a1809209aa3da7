import numpy as np
import pytest

from cellpca.errors import DegenerateColumn, DimensionMismatch, EmptyRow, NumericalError, TooManyMissing
from cellpca.models import MaskedMatrix, ScalePack


def test_from_array_masks_nan_cells():
    X = MaskedMatrix.from_array([[1.0, np.nan], [3.0, 4.0], [5.0, 6.0]])
    assert X.mask.tolist() == [[True, False], [True, True], [True, True]]
    assert X.values[0, 1] == 0.0
    assert X.m == 5
    assert np.isnan(X.to_array()[0, 1])


def test_masked_matrix_is_read_only():
    X = MaskedMatrix.from_array(np.ones((3, 2)))
    with pytest.raises(ValueError):
        X.values[0, 0] = 2.0


def test_empty_row_rejected():
    with pytest.raises(EmptyRow):
        MaskedMatrix.from_array([[1.0, 2.0], [np.nan, np.nan]])


def test_shape_mismatch_rejected():
    with pytest.raises(DimensionMismatch):
        MaskedMatrix(np.ones((3, 2)), np.ones((2, 3), dtype=bool))


def test_require_rank_counts_observed_cells():
    X = MaskedMatrix.from_array([[1.0, np.nan], [2.0, np.nan], [3.0, 1.0]])
    with pytest.raises(TooManyMissing):
        X.require_rank(1)


def test_scale_pack_vector():
    scales = ScalePack(np.array([1.0, 2.0]), 0.5)
    assert scales.vector.tolist() == [1.0, 2.0, 0.5]
    assert ScalePack.from_vector(scales.vector).sigma2 == 0.5
    assert scales.flags.tolist() == [False, False]
    with pytest.raises(DegenerateColumn):
        ScalePack(np.array([1.0, 0.0]), 1.0)
    with pytest.raises(NumericalError):
        ScalePack(np.ones(2), 0.0)

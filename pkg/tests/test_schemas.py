import pytest
from pydantic import ValidationError

from cellpca.kernels import KernelKind
from cellpca.schemas import FitRequest, InitConfig, IrlsOptions, SimConfig


def test_irls_options_modes():
    assert IrlsOptions.for_mode("only-cell").kernel2.kind == KernelKind.QUADRATIC
    assert IrlsOptions.for_mode("only-row").kernel1.kind == KernelKind.QUADRATIC
    opts = IrlsOptions.for_mode("cellpca")
    assert opts.kernel1.kind == opts.kernel2.kind == KernelKind.TANH
    with pytest.raises(ValueError):
        IrlsOptions.for_mode("other")


def test_irls_options_reject_bad_cap():
    with pytest.raises(ValidationError):
        IrlsOptions(zero_weight_cap=0.0)
    with pytest.raises(ValidationError):
        IrlsOptions(rel_tol=-1.0)


def test_init_config_defaults():
    cfg = InitConfig(q=2)
    assert cfg.univariate_cutoff == 2.57
    assert cfg.spherical


def test_sim_config_validation():
    assert SimConfig(model="alyz").model == "ALYZ"
    with pytest.raises(ValidationError):
        SimConfig(model="other")
    with pytest.raises(ValidationError):
        SimConfig(n=10, p=3, q=3)
    with pytest.raises(ValidationError):
        SimConfig(gamma_c_grid=[-1.0])
    with pytest.raises(ValidationError):
        SimConfig(unknown_field=1)


def test_sim_config_grid_follows_scheme():
    assert SimConfig(contamination="rowwise").gamma_grid == [0.0, 3.0, 6.0, 9.0]
    assert SimConfig(contamination="cellwise").gamma_grid == [0.0, 2.0, 4.0, 6.0]


def test_fit_request_rejects_ragged_rows_and_unknown_kernels():
    with pytest.raises(ValidationError):
        FitRequest(data=[[1.0, 2.0], [1.0]], rank=1)
    with pytest.raises(ValidationError):
        FitRequest(data=[[1.0, 2.0], [1.0, 3.0]], rank=1, kernel1="huber")
    req = FitRequest(data=[[1.0, None], [1.0, 3.0]], rank=1)
    assert req.data[0][1] is None

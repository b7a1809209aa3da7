import numpy as np
import pytest

from cellpca.models import MaskedMatrix


def low_rank(n, p, q, seed, noise=0.3, spreads=(5.0, 4.0, 3.0, 2.5)):
    """Scores with decreasing spreads on a random q-frame plus isotropic noise."""
    rng = np.random.default_rng(seed)
    V, _ = np.linalg.qr(rng.standard_normal((p, q)))
    U = rng.standard_normal((n, q)) * np.array(spreads[:q])
    mu = rng.normal(0, 2, size=p)
    X = U @ V.T + mu + noise * rng.standard_normal((n, p))
    return X, V, mu


@pytest.fixture
def clean_data():
    X, V, mu = low_rank(80, 8, 2, seed=1)
    return MaskedMatrix.from_array(X), V


@pytest.fixture
def contaminated_data():
    X, V, mu = low_rank(100, 10, 2, seed=2)
    rng = np.random.default_rng(3)
    idx = rng.choice(X.size, size=X.size // 10, replace=False)
    X.flat[idx] += 15.0
    X[:5] += 12.0 * rng.standard_normal(10)
    return MaskedMatrix.from_array(X), V, idx

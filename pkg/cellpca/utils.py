import numpy as np
from numpy.typing import NDArray
from scipy import stats


def chi2_quantile(prob: float, df: float) -> float:
    if not 0 < prob < 1 or df <= 0:
        raise ValueError("need 0 < prob < 1 and df > 0")
    return float(stats.chi2.ppf(prob, df))


def fix_signs(V: NDArray) -> NDArray:
    """Signs per column such that the largest-magnitude entry of each column of V is positive."""
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    return np.where(signs == 0, 1.0, signs)


def random_orthogonal(k: int, rng: np.random.Generator) -> NDArray:
    """Haar-distributed orthogonal matrix from the QR of a Gaussian matrix."""
    Q, R = np.linalg.qr(rng.standard_normal((k, k)))
    return Q * np.where(np.diag(R) < 0, -1.0, 1.0)

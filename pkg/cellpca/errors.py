"""
Error hierarchy.
Input problems map to CLI exit code 2, numerical failures to exit code 3.
"""

from typing import Iterable, List


class CellPCAError(Exception):
    """Base class for every error raised by cellpca."""
    pass


class InputError(CellPCAError):
    """Raised when data or parameters fail validation."""
    pass


class NumericalError(CellPCAError):
    """Raised when a numerical procedure cannot produce a valid result."""
    pass


# ===== Input errors =====

class DimensionMismatch(InputError):
    """Raised when array shapes do not agree."""
    pass


class EmptyRow(InputError):
    """Raised when a row has no observed cell."""
    pass


class TooManyMissing(InputError):
    """Raised when a column has fewer observed cells than the rank requires."""
    pass


class ParseError(InputError):
    """Raised when a CSV token is neither numeric nor a missing-value token."""

    def __init__(self, row: int, col: int, token: str):
        super().__init__(f"cannot parse {token!r} at row {row}, column {col}")
        self.row = row
        self.col = col
        self.token = token


class RaggedRows(InputError):
    """Raised when CSV rows have different field counts."""
    pass


class EmptyFile(InputError):
    """Raised when a CSV file holds no data rows."""
    pass


class FractionTooLarge(InputError):
    """Raised when a contamination fraction breaks the 50% limit."""
    pass


class RankMismatch(InputError):
    """Raised when two subspaces do not share dimension and rank."""
    pass


class UnsupportedP(InputError):
    """Raised when strict mode asks for an ALYZ spectrum that is not tabulated."""
    pass


class UnsupportedTuning(InputError):
    """Raised when tanh constants other than b=1.5, c=4 are requested."""
    pass


class MonteCarloBudgetTooSmall(InputError):
    """Raised when a Monte Carlo expectation is asked for with under 1000 draws."""
    pass


class EmptyCleanSet(InputError):
    """Raised when no clean observed cell is left for the MSE."""
    pass


class InvalidFitDocument(InputError):
    """Raised when a stored fit cannot be decoded or does not match the fit schema."""
    pass


# ===== Numerical errors =====

class AllZero(NumericalError):
    """Raised when the M-scale equation has no positive root."""
    pass


class ZeroWeightGuard(NumericalError):
    """Raised when too many combined weights in a column vanish."""

    def __init__(self, columns: Iterable[int], cap: float):
        self.columns: List[int] = [int(j) for j in columns]
        self.cap = cap
        super().__init__(
            f"zero-weight fraction above {cap:.0%} in columns {self.columns}"
        )


class DegenerateColumn(NumericalError):
    """Raised when a column's weights sum to zero."""
    pass


class RankDeficient(NumericalError):
    """Raised when loadings lose column rank."""
    pass


class DegenerateScatter(NumericalError):
    """Raised when the robust score scatter is singular."""
    pass


class ZeroEigenvalue(NumericalError):
    """Raised when a score distance needs a non-positive eigenvalue."""
    pass


class SingularB(NumericalError):
    """Raised when the Jacobian of the estimating equation cannot be inverted."""
    pass


class RetriesExhausted(NumericalError):
    """Raised when random NA placement keeps violating ingestion minimums."""
    pass

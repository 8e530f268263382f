import logging
from typing import Any, Tuple, Union

import numpy as np
from pydantic import field_validator

from ..exceptions.simulation_exceptions import ParameterException, ValidationException
from ..models.base import DomainModel, frozen_array
from .correlation import CorrelationMatrix

logger = logging.getLogger(__name__)

MatrixLike = Union[CorrelationMatrix, np.ndarray]


class ViolationMatrix(DomainModel):
    """Cauchy-Schwarz witness V[i, j] = (2/3) sqrt(G_ii G_jj) - G_ij; positive entries are non-classical."""

    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def _check_values(cls, value: Any) -> np.ndarray:
        arr = np.asarray(value, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValidationException(f"Violation matrix must be square, got shape {arr.shape}")
        return frozen_array(arr, float)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def non_negative_view(self) -> np.ndarray:
        """Copy with the non-violating (negative) entries zeroed."""
        return np.maximum(self.values, 0.0)


def _as_array(m: MatrixLike) -> np.ndarray:
    return m.values if isinstance(m, CorrelationMatrix) else np.asarray(m, dtype=float)


def violation_matrix(gamma: MatrixLike) -> ViolationMatrix:
    g = _as_array(gamma)
    if np.any(g < 0):
        raise ValidationException("Correlation matrix has negative entries")
    diagonal = np.diag(g)
    v = (2.0 / 3.0) * np.sqrt(np.outer(diagonal, diagonal)) - g
    np.fill_diagonal(v, 0.0)
    return ViolationMatrix(values=v)


def max_violation(v: ViolationMatrix) -> Tuple[float, Tuple[int, int]]:
    """Largest off-diagonal witness value and its 1-based output pair."""
    n = v.dim
    if n < 2:
        return 0.0, (1, 1)
    rows, cols = np.triu_indices(n, k=1)
    best = int(np.argmax(v.values[rows, cols]))
    return float(v.values[rows[best], cols[best]]), (int(rows[best]) + 1, int(cols[best]) + 1)


def similarity(a: MatrixLike, b: MatrixLike) -> float:
    """
    Overlap S = (sum sqrt(a b))^2 / (sum a * sum b) between two output distributions.

    Sums run over the distinct unordered outcomes (i <= j, bunching included), so
    S(a, b) = 1 exactly when a and b are proportional.
    """
    x = _as_array(a)
    y = _as_array(b)
    if x.shape != y.shape:
        raise ValidationException(f"Dimension mismatch: {x.shape} vs {y.shape}")
    if np.any(x < 0) or np.any(y < 0):
        raise ValidationException("Similarity needs non-negative matrices")
    upper = np.triu_indices(x.shape[0])
    x, y = x[upper], y[upper]
    sx, sy = float(x.sum()), float(y.sum())
    if sx <= 0 or sy <= 0:
        raise ValidationException("Similarity is undefined for an all-zero matrix")
    overlap = float(np.sqrt(x * y).sum())
    return min(1.0, overlap**2 / (sx * sy))


def hom_max_visibility(reflectivity: float) -> float:
    """Largest HOM visibility 2RT/(R^2 + T^2) of a splitter with ratio R:T for identical photons."""
    if not 0.0 < reflectivity < 1.0:
        raise ParameterException(f"Reflectivity must lie in (0, 1), got {reflectivity}")
    transmissivity = 1.0 - reflectivity
    return 2.0 * reflectivity * transmissivity / (reflectivity**2 + transmissivity**2)


def indistinguishability_bound(raw_visibility: float, reflectivity: float) -> float:
    """Raw dip visibility corrected for the splitter imbalance."""
    if not 0.0 <= raw_visibility <= 1.0:
        raise ParameterException(f"Raw visibility must lie in [0, 1], got {raw_visibility}")
    return raw_visibility / hom_max_visibility(reflectivity)


def inverse_participation_ratio(p: Union[np.ndarray, CorrelationMatrix]) -> float:
    """Sum of squared probabilities; 1 for a fully localized distribution."""
    if isinstance(p, CorrelationMatrix):
        p = p.values[np.triu_indices(p.dim)]
    p = np.asarray(p, dtype=float).ravel()
    total = p.sum()
    if total <= 0:
        raise ValidationException("Inverse participation ratio needs a non-empty distribution")
    p = p / total
    return float(np.sum(p**2))

import logging
from typing import Any, List, Sequence, Tuple

import numpy as np
from pydantic import Field, field_validator, model_validator
from typing_extensions import Self

from ..exceptions.simulation_exceptions import NumericalException, ParameterException, ValidationException
from ..models.base import DomainModel, frozen_array
from .evolution import UnitaryMatrix

logger = logging.getLogger(__name__)

NORMALIZATION_TOL = 1e-9
NEGATIVE_TOL = 1e-12

Pair = Tuple[int, int]


class SinglesDistribution(DomainModel):
    input_mode: int = Field(ge=1)
    probabilities: np.ndarray

    @field_validator("probabilities", mode="before")
    @classmethod
    def _check_probabilities(cls, value: Any) -> np.ndarray:
        arr = np.asarray(value, dtype=float)
        if arr.ndim != 1 or np.any(arr < 0):
            raise ValidationException("Singles distribution must be a non-negative vector")
        if abs(arr.sum() - 1.0) > 1e-10:
            raise ValidationException(f"Singles distribution sums to {arr.sum():.12f}, expected 1")
        return frozen_array(arr, float)


class PairInput(DomainModel):
    """Two photons injected into distinct ports (1-based) with wavepacket overlap `indistinguishability`."""

    mode_i: int = Field(ge=1)
    mode_j: int = Field(ge=1)
    indistinguishability: float = Field(default=1.0, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _check_distinct(self) -> Self:
        if self.mode_i == self.mode_j:
            raise ValueError(f"Input modes must be distinct, got {self.mode_i} twice")
        return self

    def with_indistinguishability(self, mu: float) -> "PairInput":
        return PairInput(mode_i=self.mode_i, mode_j=self.mode_j, indistinguishability=mu)


class CorrelationMatrix(DomainModel):
    """
    Two-photon output distribution over unordered pairs, stored dense and symmetric.

    values[k, l] for k != l is the probability of one photon in k and one in l;
    values[k, k] is the bunching probability. The upper triangle sums to one.
    """

    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def _check_values(cls, value: Any) -> np.ndarray:
        arr = np.asarray(value, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] == 0:
            raise ValidationException(f"Correlation matrix must be square, got shape {arr.shape}")
        if not np.allclose(arr, arr.T, rtol=0.0, atol=1e-12):
            raise ValidationException("Correlation matrix must be symmetric")
        if np.any(arr < 0):
            raise ValidationException("Correlation matrix has negative entries")
        total = float(np.triu(arr).sum())
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise ValidationException(f"Correlation matrix upper triangle sums to {total:.12f}, expected 1")
        # the stored matrix is exactly symmetric: the lower triangle mirrors the upper
        return frozen_array(np.triu(arr) + np.triu(arr, 1).T, float)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def unordered_items(self) -> List[Tuple[Pair, float]]:
        n = self.dim
        return [((k + 1, l + 1), float(self.values[k, l])) for k in range(n) for l in range(k, n)]

    def at(self, pair: Pair) -> float:
        k, l = pair
        return float(self.values[k - 1, l - 1])

    @classmethod
    def from_unordered(cls, n: int, items: Sequence[Tuple[Pair, float]]) -> "CorrelationMatrix":
        values = np.zeros((n, n))
        for (k, l), value in items:
            values[k - 1, l - 1] = value
            values[l - 1, k - 1] = value
        return cls(values=values)

    @classmethod
    def normalized(cls, values: np.ndarray) -> "CorrelationMatrix":
        values = np.asarray(values, dtype=float)
        total = float(np.triu(values).sum())
        if total <= 0:
            raise NumericalException("Cannot normalize an all-zero correlation matrix")
        return cls(values=values / total)


def _check_mode(n: int, mode: int) -> int:
    if not 1 <= mode <= n:
        raise ValidationException(f"Mode {mode} outside 1..{n}")
    return mode - 1


def _pair_columns(u: UnitaryMatrix, pair: PairInput) -> Tuple[np.ndarray, np.ndarray]:
    i = _check_mode(u.dim, pair.mode_i)
    j = _check_mode(u.dim, pair.mode_j)
    return u.entries[:, i], u.entries[:, j]


def _interference_terms(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Distinguishable part and interference part of the unordered two-photon distribution."""
    direct = np.outer(a, b)
    exchange = np.outer(b, a)
    bunching = 1.0 + np.eye(a.shape[0])
    classical = (np.abs(direct) ** 2 + np.abs(exchange) ** 2) / bunching
    interference = 2.0 * np.real(direct * np.conj(exchange)) / bunching
    return classical, interference


def correlation_from_columns(a: np.ndarray, b: np.ndarray, mu: float) -> np.ndarray:
    """Gamma(mu) = Gamma' + mu * Delta for the amplitude columns of the two inputs."""
    if not 0.0 <= mu <= 1.0:
        raise ParameterException(f"Indistinguishability must lie in [0, 1], got {mu}")
    classical, interference = _interference_terms(np.asarray(a), np.asarray(b))
    gamma = classical + mu * interference
    most_negative = float(gamma.min())
    if most_negative < -NEGATIVE_TOL:
        raise NumericalException(f"Correlation entry {most_negative:.3e} is negative beyond rounding")
    gamma = np.maximum(gamma, 0.0)
    return np.triu(gamma) + np.triu(gamma, 1).T


def singles_distribution(u: UnitaryMatrix, input_mode: int) -> SinglesDistribution:
    i = _check_mode(u.dim, input_mode)
    return SinglesDistribution(input_mode=input_mode, probabilities=np.abs(u.entries[:, i]) ** 2)


def singles_map(u: UnitaryMatrix) -> List[SinglesDistribution]:
    return [singles_distribution(u, mode) for mode in range(1, u.dim + 1)]


def quantum_correlation(u: UnitaryMatrix, pair: PairInput) -> CorrelationMatrix:
    a, b = _pair_columns(u, pair)
    return CorrelationMatrix(values=correlation_from_columns(a, b, 1.0))


def classical_correlation(u: UnitaryMatrix, pair: PairInput) -> CorrelationMatrix:
    a, b = _pair_columns(u, pair)
    return CorrelationMatrix(values=correlation_from_columns(a, b, 0.0))


def partial_correlation(u: UnitaryMatrix, pair: PairInput) -> CorrelationMatrix:
    a, b = _pair_columns(u, pair)
    return CorrelationMatrix(values=correlation_from_columns(a, b, pair.indistinguishability))


def bunching_probability(gamma: CorrelationMatrix) -> float:
    return float(np.trace(gamma.values))


def hom_dip_curve(
    u: UnitaryMatrix,
    pair: PairInput,
    output_pair: Pair,
    delays: Sequence[float],
    coherence_time: float,
) -> List[Tuple[float, float]]:
    """
    Coincidence probability at `output_pair` versus the relative delay of the photons.

    The overlap decays as mu(tau) = mu0 * exp(-(tau / coherence_time)^2), so the curve
    is symmetric in tau and returns to the distinguishable value far from the dip.
    """
    if coherence_time <= 0:
        raise ParameterException(f"coherence_time must be positive, got {coherence_time}")
    a, b = _pair_columns(u, pair)
    k = _check_mode(u.dim, output_pair[0])
    l = _check_mode(u.dim, output_pair[1])
    classical, interference = _interference_terms(a, b)

    curve = []
    for tau in delays:
        mu = pair.indistinguishability * np.exp(-((tau / coherence_time) ** 2))
        value = classical[k, l] + mu * interference[k, l]
        if value < -NEGATIVE_TOL:
            raise NumericalException(f"Negative coincidence probability {value:.3e} at delay {tau}")
        curve.append((float(tau), float(max(value, 0.0))))
    return curve

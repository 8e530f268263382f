import logging
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import Field, PositiveInt, field_serializer, field_validator, model_validator
from typing_extensions import Self

from ..exceptions.simulation_exceptions import EstimationException, ParameterException, ValidationException
from ..models.base import DomainModel, frozen_array
from .correlation import NORMALIZATION_TOL, CorrelationMatrix
from .seeding import make_rng

logger = logging.getLogger(__name__)

Pair = Tuple[int, int]


class LossVector(DomainModel):
    """Per-output-mode probability that a photon reaches its detector."""

    efficiencies: np.ndarray

    @field_validator("efficiencies", mode="before")
    @classmethod
    def _check_efficiencies(cls, value: Any) -> np.ndarray:
        arr = np.asarray(value, dtype=float)
        if arr.ndim != 1 or arr.size == 0:
            raise ValidationException("Efficiencies must be a non-empty vector")
        if np.any(arr <= 0) or np.any(arr > 1):
            raise ValidationException("Efficiencies must lie in (0, 1]")
        return frozen_array(arr, float)

    @field_serializer("efficiencies")
    def _dump_efficiencies(self, value: np.ndarray) -> List[float]:
        return value.tolist()

    @property
    def dim(self) -> int:
        return self.efficiencies.size

    @classmethod
    def uniform(cls, n: int, eta: float = 1.0) -> "LossVector":
        return cls(efficiencies=np.full(n, eta))

    @classmethod
    def from_propagation_loss(cls, n: int, db_per_length: float, length: float) -> "LossVector":
        """Uniform straight-waveguide loss, e.g. 0.2 dB/cm over the chip length."""
        if db_per_length < 0 or length < 0:
            raise ParameterException("Propagation loss and length must be non-negative")
        return cls.uniform(n, 10.0 ** (-db_per_length * length / 10.0))

    def combine(self, other: "LossVector") -> "LossVector":
        if other.dim != self.dim:
            raise ValidationException(f"Loss vectors differ in size: {self.dim} vs {other.dim}")
        return LossVector(efficiencies=self.efficiencies * other.efficiencies)

    def pair_efficiency(self) -> np.ndarray:
        """Probability that both photons of an (i, j) event survive."""
        return np.outer(self.efficiencies, self.efficiencies)


class CountRecord(DomainModel):
    """Recorded two-fold coincidences per unordered output pair (1-based keys)."""

    n_modes: PositiveInt
    pairs: Dict[Pair, int]
    total_pairs_emitted: PositiveInt
    bunching_split: float = Field(default=0.5, gt=0.0, lt=1.0)
    seed: int = Field(default=0, ge=0, lt=2**64)

    @field_validator("pairs", mode="before")
    @classmethod
    def _accept_rows(cls, value: Any) -> Any:
        if isinstance(value, list):
            return {(int(row["i"]), int(row["j"])): int(row["count"]) for row in value}
        return value

    @model_validator(mode="after")
    def _check_counts(self) -> Self:
        for (i, j), count in self.pairs.items():
            if not 1 <= i <= j <= self.n_modes:
                raise ValidationException(f"Count key ({i}, {j}) is not an ordered pair within 1..{self.n_modes}")
            if count < 0:
                raise ValidationException(f"Negative count at ({i}, {j})")
        if sum(self.pairs.values()) > self.total_pairs_emitted:
            raise ValidationException("Recorded counts exceed the number of emitted pairs")
        return self

    @field_serializer("pairs")
    def _dump_pairs(self, value: Dict[Pair, int]) -> List[Dict[str, int]]:
        return [{"i": i, "j": j, "count": count} for (i, j), count in sorted(value.items())]

    @property
    def total_counts(self) -> int:
        return sum(self.pairs.values())

    def to_rows(self) -> List[Tuple[int, int, int]]:
        return [(i, j, count) for (i, j), count in sorted(self.pairs.items())]

    @classmethod
    def from_rows(cls, rows, **metadata) -> "CountRecord":
        return cls(pairs={(int(i), int(j)): int(count) for i, j, count in rows}, **metadata)

    def count_matrix(self) -> np.ndarray:
        counts = np.zeros((self.n_modes, self.n_modes))
        for (i, j), count in self.pairs.items():
            counts[i - 1, j - 1] = count
            counts[j - 1, i - 1] = count
        return counts


def bunching_detection_factor(bunching_split: float) -> float:
    """Probability that a bunched pair splits at the fiber splitter into a two-detector coincidence."""
    return 2.0 * bunching_split * (1.0 - bunching_split)


def sample_counts(
    gamma: CorrelationMatrix,
    n_pairs: int,
    loss: Optional[LossVector] = None,
    bunching_split: float = 0.5,
    seed: int = 0,
) -> CountRecord:
    """
    Draw `n_pairs` two-photon events from gamma and keep the ones that get recorded.

    Events are drawn multinomially over the unordered pairs, thinned by the survival of
    both photons, and bunched events are further thinned by the splitter's detection
    factor. The result is a pure function of the arguments.
    """
    if n_pairs < 1:
        raise ParameterException(f"n_pairs must be positive, got {n_pairs}")
    if not 0.0 < bunching_split < 1.0:
        raise ParameterException(f"bunching_split must lie in (0, 1), got {bunching_split}")
    n = gamma.dim
    loss = loss or LossVector.uniform(n)
    if loss.dim != n:
        raise ValidationException(f"Loss vector has {loss.dim} entries for {n} modes")

    rows, cols = np.triu_indices(n)
    probabilities = gamma.values[rows, cols]
    if abs(probabilities.sum() - 1.0) > NORMALIZATION_TOL:
        raise ParameterException("Correlation matrix is not normalized")

    rng = make_rng(seed)
    emitted = rng.multinomial(n_pairs, probabilities / probabilities.sum())
    survival = loss.pair_efficiency()[rows, cols]
    survived = rng.binomial(emitted, survival)
    detection = np.where(rows == cols, bunching_detection_factor(bunching_split), 1.0)
    recorded = rng.binomial(survived, detection)

    pairs = {(int(r) + 1, int(c) + 1): int(count) for r, c, count in zip(rows, cols, recorded)}
    logger.debug(f"Sampled {n_pairs} pairs, recorded {int(recorded.sum())} coincidences (seed={seed})")
    return CountRecord(
        n_modes=n,
        pairs=pairs,
        total_pairs_emitted=n_pairs,
        bunching_split=bunching_split,
        seed=seed,
    )


def estimate_correlation(
    record: CountRecord,
    correct_bunching: bool = True,
    correct_loss: Optional[LossVector] = None,
) -> Tuple[CorrelationMatrix, np.ndarray]:
    """
    Normalized correlation estimate and its Poisson uncertainty.

    Counts are divided by their detection factor (bunching splitter and/or output
    efficiencies) before normalization; sigma is sqrt(count) propagated through the same
    factors to first order, ignoring the covariance introduced by normalization.
    """
    n = record.n_modes
    counts = record.count_matrix()
    if counts.sum() <= 0:
        raise EstimationException("No coincidences recorded; cannot estimate the correlation")

    factor = np.ones((n, n))
    if correct_bunching:
        factor[np.diag_indices(n)] *= bunching_detection_factor(record.bunching_split)
    if correct_loss is not None:
        if correct_loss.dim != n:
            raise ValidationException(f"Loss vector has {correct_loss.dim} entries for {n} modes")
        factor *= correct_loss.pair_efficiency()

    corrected = counts / factor
    total = float(np.triu(corrected).sum())
    gamma_hat = CorrelationMatrix(values=corrected / total)
    sigma = np.sqrt(counts) / factor / total
    return gamma_hat, sigma


def violation_significance(gamma_hat: CorrelationMatrix, sigma: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Cauchy-Schwarz witness on estimated data with its first-order standard deviation.

    Returns (V, sigma_V, V / sigma_V); the significance is 0 where sigma_V vanishes and on
    the diagonal.
    """
    g = gamma_hat.values
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != g.shape:
        raise ValidationException(f"Uncertainty shape {sigma.shape} does not match {g.shape}")
    if np.any(sigma < 0):
        raise ValidationException("Uncertainties must be non-negative")

    diagonal = np.diag(g)
    sigma_diagonal = np.diag(sigma)
    v = (2.0 / 3.0) * np.sqrt(np.outer(diagonal, diagonal)) - g

    with np.errstate(divide="ignore", invalid="ignore"):
        # dV/dG_ii = (1/3) sqrt(G_jj / G_ii)
        d_ii = np.sqrt(np.divide.outer(diagonal, diagonal)).T / 3.0
        propagated = (d_ii * sigma_diagonal[:, None]) ** 2 + (d_ii.T * sigma_diagonal[None, :]) ** 2 + sigma**2
    degenerate = (diagonal[:, None] == 0) | (diagonal[None, :] == 0)
    sigma_v = np.where(degenerate, sigma, np.sqrt(propagated))

    np.fill_diagonal(v, 0.0)
    np.fill_diagonal(sigma_v, 0.0)
    significance = np.divide(v, sigma_v, out=np.zeros_like(v), where=sigma_v > 0)
    return v, sigma_v, significance

import logging
from functools import reduce
from typing import Any, Sequence, Tuple, Union

import numpy as np
from pydantic import field_validator
from scipy.linalg import eigh, svd

from ..exceptions.simulation_exceptions import ParameterException, ValidationException
from ..models.base import DomainModel, frozen_array
from .lattice import CouplingMatrix, as_coupling_matrix

logger = logging.getLogger(__name__)

UNITARITY_TOL = 1e-10
# above this the eigenvector basis is re-projected onto the unitary group
_REPROJECT_TOL = 1e-12


def unitarity_deviation(m: np.ndarray) -> float:
    m = np.asarray(m)
    return float(np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0]))))


class UnitaryMatrix(DomainModel):
    """Evolution operator U(z) = exp(i C z); U[k, i] is the amplitude from input i to output k."""

    entries: np.ndarray

    @field_validator("entries", mode="before")
    @classmethod
    def _check_unitary(cls, value: Any) -> np.ndarray:
        arr = np.asarray(value, dtype=complex)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] == 0:
            raise ValidationException(f"Unitary must be square and non-empty, got shape {arr.shape}")
        deviation = unitarity_deviation(arr)
        if deviation > UNITARITY_TOL:
            raise ValidationException(f"Matrix is not unitary (max |U^H U - I| = {deviation:.3e})")
        return frozen_array(arr, complex)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def identity(cls, n: int) -> "UnitaryMatrix":
        return cls(entries=np.eye(n, dtype=complex))

    def transition_probabilities(self) -> np.ndarray:
        return np.abs(self.entries) ** 2


def _nearest_unitary(m: np.ndarray) -> np.ndarray:
    w, _, vh = svd(m)
    return w @ vh


def evolve_unitary(c: Union[CouplingMatrix, np.ndarray], z: float) -> UnitaryMatrix:
    """
    U = exp(i c z) through the spectral decomposition c = V diag(lambda) V^H.

    The coupling matrix is Hermitian, so the eigenvalues are real and the result is
    unitary up to the eigensolver's accuracy.
    """
    if z < 0:
        raise ParameterException(f"Propagation length must be non-negative, got {z}")
    c = as_coupling_matrix(c)
    eigenvalues, vectors = eigh(c.entries)
    u = (vectors * np.exp(1j * eigenvalues * z)) @ vectors.conj().T

    deviation = unitarity_deviation(u)
    if deviation > _REPROJECT_TOL:
        logger.debug(f"Re-projecting evolution operator onto unitary group (deviation {deviation:.2e})")
        u = _nearest_unitary(u)
    return UnitaryMatrix(entries=u)


def evolve_segments(segments: Sequence[Tuple[Union[CouplingMatrix, np.ndarray], float]]) -> UnitaryMatrix:
    """Ordered product U_K ... U_2 U_1 of piecewise-constant propagation segments."""
    if not segments:
        raise ParameterException("evolve_segments needs at least one segment")
    unitaries = [evolve_unitary(c, z).entries for c, z in segments]
    u = reduce(lambda acc, step: step @ acc, unitaries[1:], unitaries[0])
    if unitarity_deviation(u) > _REPROJECT_TOL:
        u = _nearest_unitary(u)
    return UnitaryMatrix(entries=u)


def propagation_profile(
    c: Union[CouplingMatrix, np.ndarray],
    input_mode: int,
    z_values: Sequence[float],
) -> np.ndarray:
    """Single-photon output distribution for each z in `z_values`, shape (len(z), N)."""
    c = as_coupling_matrix(c)
    if not 1 <= input_mode <= c.dim:
        raise ValidationException(f"Input mode {input_mode} outside 1..{c.dim}")
    z = np.asarray(z_values, dtype=float)
    if np.any(z < 0):
        raise ParameterException("Propagation lengths must be non-negative")

    eigenvalues, vectors = eigh(c.entries)
    weights = vectors.conj()[input_mode - 1, :]
    amplitudes = (np.exp(1j * np.outer(z, eigenvalues)) * weights) @ vectors.T
    return np.abs(amplitudes) ** 2

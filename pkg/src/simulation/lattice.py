import logging
from enum import Enum
from itertools import combinations_with_replacement
from typing import Any, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import Field, PositiveFloat, PositiveInt, field_validator, model_validator
from scipy.spatial.distance import pdist, squareform
from typing_extensions import Self

from ..exceptions.simulation_exceptions import GeometryException, ParameterException, ValidationException
from ..models.base import DomainModel, frozen_array
from .seeding import make_rng

logger = logging.getLogger(__name__)

HERMITIAN_RTOL = 1e-9

Pair = Tuple[int, int]


class LatticeKind(str, Enum):
    CHAIN = "chain"
    GRID2D = "grid2d"
    EXPLICIT = "explicit"


class LatticeGeometry(DomainModel):
    """
    Waveguide positions in the transverse plane.

    Sites are numbered row-major starting at 1; for a grid, port 1 sits at the origin
    and port rows*cols at the opposite corner.
    """

    kind: LatticeKind
    rows: PositiveInt = 1
    cols: PositiveInt = 1
    positions: List[Tuple[float, float]] = Field(default_factory=list)
    spacing: PositiveFloat

    @model_validator(mode="before")
    @classmethod
    def _fill_positions(cls, data: Any) -> Any:
        if not isinstance(data, dict) or data.get("positions"):
            return data
        kind = data.get("kind")
        spacing = data.get("spacing", 1.0)
        rows = data.get("rows", 1)
        cols = data.get("cols", 1)
        if kind in (LatticeKind.CHAIN, LatticeKind.CHAIN.value, LatticeKind.GRID2D, LatticeKind.GRID2D.value):
            data = dict(data)
            data["positions"] = [(c * spacing, r * spacing) for r in range(rows) for c in range(cols)]
        return data

    @model_validator(mode="after")
    def _check_layout(self) -> Self:
        if not self.positions:
            raise GeometryException("Lattice geometry has no sites")
        if self.kind == LatticeKind.CHAIN and self.rows != 1:
            raise GeometryException(f"A chain has rows=1, got rows={self.rows}")
        if self.kind in (LatticeKind.CHAIN, LatticeKind.GRID2D) and self.rows * self.cols != len(self.positions):
            raise GeometryException(
                f"{self.kind.value} geometry expects rows*cols={self.rows * self.cols} positions, "
                f"got {len(self.positions)}"
            )
        if len(set(self.positions)) != len(self.positions):
            raise GeometryException("Lattice positions must be distinct")
        return self

    @property
    def n_sites(self) -> int:
        return len(self.positions)

    @classmethod
    def chain(cls, n_sites: int, spacing: float = 1.0) -> "LatticeGeometry":
        return cls(kind=LatticeKind.CHAIN, rows=1, cols=n_sites, spacing=spacing)

    @classmethod
    def grid2d(cls, rows: int, cols: int, spacing: float = 1.0) -> "LatticeGeometry":
        return cls(kind=LatticeKind.GRID2D, rows=rows, cols=cols, spacing=spacing)

    @classmethod
    def explicit(cls, positions: Sequence[Tuple[float, float]], spacing: float = 1.0) -> "LatticeGeometry":
        positions = [tuple(map(float, p)) for p in positions]
        return cls(kind=LatticeKind.EXPLICIT, rows=1, cols=len(positions), positions=positions, spacing=spacing)


class CouplingMatrix(DomainModel):
    """Hermitian matrix of propagation constants (diagonal) and couplings (off-diagonal), rad/length."""

    entries: np.ndarray

    @field_validator("entries", mode="before")
    @classmethod
    def _symmetrize(cls, value: Any) -> np.ndarray:
        arr = np.asarray(value, dtype=complex)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] == 0:
            raise ValidationException(f"Coupling matrix must be square and non-empty, got shape {arr.shape}")
        deviation = float(np.max(np.abs(arr - arr.conj().T)))
        scale = max(1.0, float(np.max(np.abs(arr))))
        if deviation > HERMITIAN_RTOL * scale:
            raise ValidationException(f"Coupling matrix is not Hermitian (max deviation {deviation:.3e})")
        return frozen_array(0.5 * (arr + arr.conj().T), complex)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]


class DisorderSpec(DomainModel):
    seed: int = Field(ge=0, lt=2**64)
    edge_jitter: float = Field(default=0.0, ge=0.0, le=1.0)
    segments: PositiveInt = 1
    segment_length_jitter: float = Field(default=0.0, ge=0.0, le=1.0)
    # additive half-width on propagation constants; off by default
    beta_jitter: float = Field(default=0.0, ge=0.0)


def as_coupling_matrix(c: Union[CouplingMatrix, np.ndarray, Sequence]) -> CouplingMatrix:
    return c if isinstance(c, CouplingMatrix) else CouplingMatrix(entries=c)


def build_coupling_matrix(
    geometry: LatticeGeometry,
    c0: float,
    d0: float,
    beta: Union[float, Sequence[float]] = 0.0,
    cutoff: Optional[float] = None,
) -> CouplingMatrix:
    """
    Evanescent coupling matrix for a waveguide geometry.

    Off-diagonal entries decay as c0*exp(-(d_ij - spacing)/d0), so nearest neighbours
    at the reference spacing couple with exactly c0. Every pair couples unless a
    `cutoff` distance is given.
    """
    if c0 <= 0 or d0 <= 0:
        raise ParameterException(f"c0 and d0 must be positive, got c0={c0}, d0={d0}")
    if cutoff is not None and cutoff <= 0:
        raise ParameterException(f"cutoff must be positive, got {cutoff}")

    positions = np.asarray(geometry.positions, dtype=float)
    n = positions.shape[0]
    if n > 1:
        condensed = pdist(positions)
        if np.any(condensed == 0.0):
            raise GeometryException("Duplicate waveguide positions")
        distances = squareform(condensed)
    else:
        distances = np.zeros((1, 1))

    entries = c0 * np.exp(-(distances - geometry.spacing) / d0)
    if cutoff is not None:
        entries[distances > cutoff * (1.0 + 1e-12)] = 0.0

    betas = np.broadcast_to(np.asarray(beta, dtype=float), (n,))
    np.fill_diagonal(entries, betas)

    logger.debug(f"Built {n}x{n} coupling matrix for {geometry.kind.value} geometry (c0={c0}, d0={d0})")
    return CouplingMatrix(entries=entries)


def apply_disorder(
    c: CouplingMatrix,
    spec: DisorderSpec,
    total_length: float = 1.0,
) -> List[Tuple[CouplingMatrix, float]]:
    """
    Split a propagation of length `total_length` into `spec.segments` disordered pieces.

    Each segment scales every coupling by its own uniform factor in
    [1 - edge_jitter, 1 + edge_jitter] (mirrored to keep the matrix Hermitian) and has
    length total_length/K scaled by a uniform factor in
    [1 - segment_length_jitter, 1 + segment_length_jitter]. The realization is a pure
    function of `spec`.
    """
    if spec.edge_jitter >= 1.0:
        raise ParameterException(f"edge_jitter must be below 1, got {spec.edge_jitter}")
    if total_length <= 0:
        raise ParameterException(f"total length must be positive, got {total_length}")

    rng = make_rng(spec.seed)
    n = c.dim
    upper = np.triu_indices(n, k=1)
    lower = (upper[1], upper[0])

    beta_shift = rng.uniform(-spec.beta_jitter, spec.beta_jitter, size=n)

    matrices = []
    for _ in range(spec.segments):
        factors = rng.uniform(1.0 - spec.edge_jitter, 1.0 + spec.edge_jitter, size=upper[0].size)
        entries = np.array(c.entries, copy=True)
        entries[upper] = entries[upper] * factors
        entries[lower] = np.conj(entries[upper])
        entries[np.diag_indices(n)] += beta_shift
        matrices.append(CouplingMatrix(entries=entries))

    base_length = total_length / spec.segments
    lengths = base_length * (1.0 + spec.segment_length_jitter * rng.uniform(-1.0, 1.0, size=spec.segments))
    if np.any(lengths <= 0):
        raise ParameterException("Disorder produced a non-positive segment length")

    logger.debug(f"Disorder seed={spec.seed}: {spec.segments} segments, lengths={lengths.tolist()}")
    return list(zip(matrices, lengths.tolist()))


def two_photon_basis(n_sites: int) -> List[Pair]:
    """Unordered output pairs (i, j), i <= j, 1-based, in lexicographic order."""
    if n_sites < 1:
        raise ParameterException(f"n_sites must be at least 1, got {n_sites}")
    return list(combinations_with_replacement(range(1, n_sites + 1), 2))


def single_photon_graph(c: CouplingMatrix, tol: float = 1e-12) -> List[Pair]:
    n = c.dim
    return [(i + 1, j + 1) for i in range(n) for j in range(i + 1, n) if abs(c.entries[i, j]) > tol]


def two_photon_graph(c: CouplingMatrix, tol: float = 1e-12) -> Tuple[List[Pair], List[Tuple[Pair, Pair]]]:
    """
    State-space graph of two indistinguishable photons on the lattice.

    Vertices are the two_photon_basis states; an edge joins two states when one photon
    hops along a non-zero coupling.
    """
    vertices = two_photon_basis(c.dim)
    hops = {}
    for i, j in single_photon_graph(c, tol):
        hops.setdefault(i, []).append(j)
        hops.setdefault(j, []).append(i)

    edges = set()
    for state in vertices:
        for slot in (0, 1):
            moving, staying = state[slot], state[1 - slot]
            for target in hops.get(moving, []):
                neighbour = tuple(sorted((target, staying)))
                edges.add(tuple(sorted((state, neighbour))))
    return vertices, sorted(edges)

import logging
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from itertools import combinations
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import Field, field_serializer, field_validator, model_validator
from scipy.optimize import curve_fit, least_squares
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from typing_extensions import Self

from ..exceptions.simulation_exceptions import (
    InconsistentDataException,
    NumericalException,
    ParameterException,
    UnderdeterminedException,
    ValidationException,
)
from ..models.base import DomainModel, frozen_array
from .correlation import CorrelationMatrix, PairInput, SinglesDistribution, correlation_from_columns
from .evolution import UnitaryMatrix
from .seeding import make_rng

logger = logging.getLogger(__name__)

Pair = Tuple[int, int]
Scan = Tuple[Pair, Pair]

ZERO_MODULUS = 1e-8
# visibility noise floor added in quadrature to reported uncertainties when weighting the fit
VISIBILITY_FLOOR = 5e-3
# branches closer than this (in radians, up to conjugation) count as the same solution
BRANCH_SEPARATION = 0.1
GAUGE_DECLARATION = "phases of output row 1 and of the first input column are fixed to 0"


class ScanPlanMode(str, Enum):
    SPANNING = "spanning"
    FULL = "full"
    COMPACT = "compact"


class VisibilityRecord(DomainModel):
    input_pair: Pair
    output_pair: Pair
    visibility: float = Field(ge=-1.0, le=1.0)
    uncertainty: Optional[float] = Field(default=None, ge=0.0)
    scan_id: Optional[int] = None

    @model_validator(mode="after")
    def _check_pairs(self) -> Self:
        if self.input_pair[0] == self.input_pair[1]:
            raise ValueError(f"Input modes must be distinct, got {self.input_pair}")
        return self


class SubmatrixEstimate(DomainModel):
    """
    Reconstructed columns of the evolution operator for the injected modes.

    Rows are output modes 1..N, columns follow `input_modes`. Phases of output row 1
    and of the first column are 0 by convention; the estimate is defined up to that
    gauge and a global complex conjugation.
    """

    input_modes: List[int]
    moduli: np.ndarray
    phases: np.ndarray
    residual: float = Field(ge=0.0)
    alternative_branches: int = Field(default=0, ge=0)
    unconstrained: List[Pair] = Field(default_factory=list)
    consistent: bool = True
    flags: List[str] = Field(default_factory=list)
    gauge: str = GAUGE_DECLARATION

    @field_validator("moduli", "phases", mode="before")
    @classmethod
    def _as_matrix(cls, value: Any) -> np.ndarray:
        arr = np.asarray(value, dtype=float)
        if arr.ndim != 2:
            raise ValidationException(f"Expected an N x M matrix, got shape {arr.shape}")
        return frozen_array(arr, float)

    @model_validator(mode="after")
    def _check_gauge(self) -> Self:
        if self.moduli.shape != self.phases.shape or self.moduli.shape[1] != len(self.input_modes):
            raise ValidationException("Moduli, phases and input modes disagree in shape")
        if np.any(self.moduli < 0):
            raise ValidationException("Moduli must be non-negative")
        if np.any(np.abs(self.phases[0, :]) > 1e-12) or np.any(np.abs(self.phases[:, 0]) > 1e-12):
            raise ValidationException("Gauge violated: first row and first column phases must be 0")
        return self

    @field_serializer("moduli", "phases")
    def _dump_matrix(self, value: np.ndarray) -> List[List[float]]:
        return value.tolist()

    @property
    def n_outputs(self) -> int:
        return self.moduli.shape[0]

    def amplitudes(self) -> np.ndarray:
        return self.moduli * np.exp(1j * self.phases)

    def column(self, mode: int) -> np.ndarray:
        if mode not in self.input_modes:
            raise ValidationException(f"Mode {mode} is not covered by the estimate {self.input_modes}")
        return self.amplitudes()[:, self.input_modes.index(mode)]


class DipFit(DomainModel):
    floor: float
    depth: float
    center: float
    width: float
    depth_uncertainty: Optional[float] = None

    @property
    def visibility(self) -> float:
        return float(np.clip(self.depth, -1.0, 1.0))


class DipCurve(DomainModel):
    """Coincidences at one output pair over a scan of the relative photon delay."""

    input_pair: Pair
    output_pair: Pair
    delays: List[float] = Field(min_length=4)
    coincidences: List[float] = Field(min_length=4)
    scan_id: Optional[int] = None

    @model_validator(mode="after")
    def _check_scan(self) -> Self:
        if len(self.delays) != len(self.coincidences):
            raise ValueError(f"{len(self.delays)} delays but {len(self.coincidences)} coincidence values")
        if self.input_pair[0] == self.input_pair[1]:
            raise ValueError(f"Input modes must be distinct, got {self.input_pair}")
        return self

    def to_record(self) -> VisibilityRecord:
        record = visibility_from_dip(self.input_pair, self.output_pair, self.delays, self.coincidences)
        return record.model_copy(update={"scan_id": self.scan_id})


def gauge_fixed(m: np.ndarray) -> np.ndarray:
    """Rephase rows and columns so the first column and the first row are real and non-negative."""
    m = np.asarray(m, dtype=complex)
    m = m * np.exp(-1j * np.angle(m[:, :1]))
    return m * np.exp(-1j * np.angle(m[:1, :]))


def _wrap(phases: np.ndarray) -> np.ndarray:
    """Map angles into (-pi, pi]."""
    return np.pi - np.mod(np.pi - phases, 2.0 * np.pi)


def _visibility_terms(m: np.ndarray, columns: Pair, outputs: Pair) -> Tuple[complex, complex]:
    (a, b), (k, l) = columns, outputs
    return m[k, a] * m[l, b], m[k, b] * m[l, a]


def _visibility_from_terms(direct: complex, exchange: complex) -> float:
    weight = abs(direct) ** 2 + abs(exchange) ** 2
    if weight == 0.0:
        return 0.0
    return float(-2.0 * np.real(direct * np.conj(exchange)) / weight)


def simulate_visibility(u: UnitaryMatrix, input_pair: Pair, output_pair: Pair) -> VisibilityRecord:
    """
    HOM visibility (classical - quantum) / classical coincidence at `output_pair`.

    With A = |U_ki||U_lj|, B = |U_kj||U_li| and the phase combination Delta, this is
    -2AB cos(Delta) / (A^2 + B^2), and 0 when no path connects the inputs to the outputs.
    """
    n = u.dim
    if input_pair[0] == input_pair[1]:
        raise ValidationException(f"Input modes must be distinct, got {input_pair}")
    if output_pair[0] == output_pair[1]:
        raise ValidationException(f"Bunched output pair {output_pair} is not a dip measurement")
    for mode in (*input_pair, *output_pair):
        if not 1 <= mode <= n:
            raise ValidationException(f"Mode {mode} outside 1..{n}")
    columns = (input_pair[0] - 1, input_pair[1] - 1)
    outputs = (output_pair[0] - 1, output_pair[1] - 1)
    visibility = _visibility_from_terms(*_visibility_terms(u.entries, columns, outputs))
    return VisibilityRecord(input_pair=input_pair, output_pair=output_pair, visibility=float(np.clip(visibility, -1, 1)))


def sample_visibility(
    u: UnitaryMatrix,
    input_pair: Pair,
    output_pair: Pair,
    events: int,
    rng: np.random.Generator,
    indistinguishability: float = 1.0,
) -> VisibilityRecord:
    """
    Visibility estimated from Poisson coincidence counts of a synchronised and a fully
    delayed measurement.

    Args:
        u: Evolution operator of the device.
        input_pair: Injected modes (1-based).
        output_pair: Detector pair of the scan (1-based, distinct).
        events: Expected coincidences at `output_pair` in the delayed reference
            measurement; the synchronised measurement runs for the same time.
        rng: Generator the counts are drawn from.
        indistinguishability: Overlap of the two photons, scaling the dip depth.

    Returns:
        The estimated record with the propagated Poisson uncertainty. A scan whose
        outputs the inputs cannot reach reports visibility 0 with uncertainty 1.

    Raises:
        ParameterException: If `events` is not positive.
        ValidationException: If the modes are invalid for `u`.
    """
    if events < 1:
        raise ParameterException(f"events must be positive, got {events}")
    ideal = simulate_visibility(u, input_pair, output_pair)
    columns = (input_pair[0] - 1, input_pair[1] - 1)
    outputs = (output_pair[0] - 1, output_pair[1] - 1)
    direct, exchange = _visibility_terms(u.entries, columns, outputs)
    if abs(direct) ** 2 + abs(exchange) ** 2 == 0.0:
        return VisibilityRecord(input_pair=input_pair, output_pair=output_pair, visibility=0.0, uncertainty=1.0)

    n_classical = int(rng.poisson(events))
    n_synchronised = int(rng.poisson(events * max(1.0 - indistinguishability * ideal.visibility, 0.0)))
    if n_classical == 0:
        return VisibilityRecord(input_pair=input_pair, output_pair=output_pair, visibility=0.0, uncertainty=1.0)

    ratio = n_synchronised / n_classical
    if n_synchronised > 0:
        uncertainty = ratio * np.sqrt(1.0 / n_synchronised + 1.0 / n_classical)
    else:
        uncertainty = 1.0 / n_classical
    return VisibilityRecord(
        input_pair=input_pair,
        output_pair=output_pair,
        visibility=float(np.clip(1.0 - ratio, -1.0, 1.0)),
        uncertainty=float(uncertainty),
    )


def sample_singles(u: UnitaryMatrix, input_mode: int, events: int, rng: np.random.Generator) -> SinglesDistribution:
    """Single-photon output distribution estimated from `events` detected photons."""
    if events < 1:
        raise ParameterException(f"events must be positive, got {events}")
    probabilities = np.abs(u.entries[:, input_mode - 1]) ** 2
    counts = rng.multinomial(events, probabilities / probabilities.sum())
    return SinglesDistribution(input_mode=input_mode, probabilities=counts / events)


def plan_scans(
    input_modes: Sequence[int],
    n_outputs: int,
    mode: ScanPlanMode = ScanPlanMode.SPANNING,
) -> List[Scan]:
    """
    HOM-dip measurement plan as (input_pair, output_pair) scans.

    spanning: for each input pair, outputs (1, l) for every l plus the chain (l, l+1)
              from l = 2, giving every unknown phase at least two constraints.
    full:     every distinct output pair for every input pair.
    compact:  the first input pair scans (1, l); later pairs containing the first mode
              scan the chain (l, l+1) from l = 1, and pairs without it scan (1, l)
              again. Three inputs and nine outputs give 24 scans.

    Raises:
        ParameterException: If fewer than two distinct inputs or two outputs are given.
    """
    if len(input_modes) < 2:
        raise ParameterException("A scan plan needs at least two input modes")
    if len(set(input_modes)) != len(input_modes):
        raise ParameterException(f"Input modes must be distinct, got {list(input_modes)}")
    if n_outputs < 2:
        raise ParameterException("A scan plan needs at least two output modes")
    mode = ScanPlanMode(mode)

    first_row = [(1, l) for l in range(2, n_outputs + 1)]
    chain = [(l, l + 1) for l in range(1, n_outputs)]
    first_mode = input_modes[0]
    plan: List[Scan] = []
    for index, input_pair in enumerate(combinations(input_modes, 2)):
        if mode == ScanPlanMode.FULL:
            outputs = list(combinations(range(1, n_outputs + 1), 2))
        elif mode == ScanPlanMode.COMPACT:
            outputs = chain if index > 0 and first_mode in input_pair else first_row
        else:
            outputs = first_row + [(l, l + 1) for l in range(2, n_outputs)]
        plan.extend((input_pair, output_pair) for output_pair in outputs)

    logger.debug(f"Planned {len(plan)} scans ({mode.value}) for inputs {list(input_modes)} over {n_outputs} outputs")
    return plan


class _PhaseProblem:
    """
    Residuals of measured minus modelled visibilities as a function of the unknown phases.

    When every record carries an uncertainty the residuals are divided by it, with
    VISIBILITY_FLOOR added in quadrature, so the cost is a chi-square.
    """

    def __init__(self, moduli: np.ndarray, unknowns: Dict[Pair, int], rows: List[dict], indistinguishability: float):
        self.n_unknowns = len(unknowns)
        self.measured = np.array([row["visibility"] for row in rows])
        self.weights = np.array([row["weight"] for row in rows])
        self.indistinguishability = indistinguishability

        uncertainties = [row["uncertainty"] for row in rows]
        self.weighted = bool(rows) and all(u is not None for u in uncertainties)
        if self.weighted:
            self.sigma = np.sqrt(np.array(uncertainties, dtype=float) ** 2 + VISIBILITY_FLOOR**2)
        else:
            self.sigma = np.ones(len(rows))

        self.terms = [row["terms"] for row in rows]
        data, r_idx, c_idx = [], [], []
        for r, terms in enumerate(self.terms):
            for var, sign in terms:
                data.append(sign)
                r_idx.append(r)
                c_idx.append(var)
        self.incidence = coo_matrix((data, (r_idx, c_idx)), shape=(len(rows), self.n_unknowns)).toarray()

    def model(self, x: np.ndarray) -> np.ndarray:
        return -self.indistinguishability * self.weights * np.cos(self.incidence @ x)

    def deviations(self, x: np.ndarray) -> np.ndarray:
        return self.measured - self.model(x)

    def residuals(self, x: np.ndarray) -> np.ndarray:
        return self.deviations(x) / self.sigma

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        slope = -self.indistinguishability * self.weights * np.sin(self.incidence @ x) / self.sigma
        return slope[:, None] * self.incidence

    def cost(self, x: np.ndarray, mask: Optional[np.ndarray] = None) -> float:
        r = self.residuals(x)
        if mask is not None:
            r = r[mask]
        return float(np.sum(r**2))


def _assignment_order(problem: _PhaseProblem, informative: np.ndarray) -> List[Tuple[int, int]]:
    """
    Order in which unknown phases are pinned during branch enumeration.

    At each step the unknown that is the only unassigned phase in the most records is
    chosen; the first such record anchors its two candidate values.
    """
    assigned = np.zeros(problem.n_unknowns, dtype=bool)
    order = []
    while not assigned.all():
        sole: Dict[int, List[int]] = {}
        for r, terms in enumerate(problem.terms):
            if not informative[r]:
                continue
            open_vars = [var for var, _ in terms if not assigned[var]]
            if len(open_vars) == 1:
                sole.setdefault(open_vars[0], []).append(r)
        if not sole:
            break
        var = max(sorted(sole), key=lambda v: len(sole[v]))
        order.append((var, sole[var][0]))
        assigned[var] = True
    return order


def _branch_seeds(problem: _PhaseProblem, informative: np.ndarray, beam_width: int) -> List[np.ndarray]:
    """Enumerate both cos branches along the assignment order, keeping the best partial fits."""
    order = _assignment_order(problem, informative)
    beam = [np.full(problem.n_unknowns, np.nan)]
    for var, anchor in order:
        terms = problem.terms[anchor]
        sign = next(s for v, s in terms if v == var)
        target = np.clip(-problem.measured[anchor] / (problem.indistinguishability * problem.weights[anchor]), -1.0, 1.0)
        angle = float(np.arccos(target))

        children = []
        for state in beam:
            rest = sum(s * state[v] for v, s in terms if v != var)
            for branch in ([angle] if angle in (0.0, np.pi) else [angle, -angle]):
                child = state.copy()
                child[var] = _wrap(np.array(sign * (branch - rest)))
                children.append(child)

        assigned = ~np.isnan(children[0])
        complete = np.array([informative[r] and all(assigned[v] for v, _ in t) for r, t in enumerate(problem.terms)])
        scored = sorted(
            children,
            key=lambda x: (problem.cost(np.nan_to_num(x), complete), tuple(np.round(np.nan_to_num(x), 9))),
        )
        beam = scored[:beam_width]
    return [np.nan_to_num(state) for state in beam]


def _polish(problem: _PhaseProblem, x0: np.ndarray) -> Tuple[float, np.ndarray]:
    if problem.n_unknowns == 0:
        return problem.cost(x0), x0
    result = least_squares(
        problem.residuals,
        x0,
        jac=problem.jacobian,
        method="trf",
        ftol=1e-14,
        xtol=1e-14,
        gtol=1e-14,
    )
    x = _wrap(result.x)
    return problem.cost(x), x


def _select(candidates: List[Tuple[float, np.ndarray]]) -> Tuple[float, np.ndarray]:
    """Lowest residual; near-ties resolved by the lexicographically smallest phase vector."""
    best_cost = min(cost for cost, _ in candidates)
    tolerance = 1e-28 + 1e-9 * best_cost
    tied = [(cost, x) for cost, x in candidates if cost <= best_cost + tolerance]
    return min(tied, key=lambda item: (tuple(np.round(item[1], 6)), item[0]))


def reconstruct_submatrix(
    singles: Sequence[SinglesDistribution],
    visibilities: Sequence[VisibilityRecord],
    restarts: int = 32,
    seed: int = 0,
    beam_width: int = 32,
    indistinguishability: float = 1.0,
    residual_threshold: float = 1e-4,
    chi2_threshold: float = 4.0,
    strict: bool = False,
    max_workers: int = 1,
) -> SubmatrixEstimate:
    """
    Moduli from single-photon distributions, relative phases from HOM visibilities.

    Phases are the least-squares fit of the visibility model, started from the
    branch-enumerated seeds and from `restarts` random phase vectors. When every record
    carries an uncertainty the fit is weighted and judged by its reduced chi-square,
    otherwise by its mean squared residual. Other fitted branches that come within the
    consistency margin of the best cost are counted and flagged as ambiguous.

    Args:
        singles: Output distribution of each injected mode; their order fixes the columns.
        visibilities: HOM dip visibilities between pairs of the injected modes.
        restarts: Random starting points in addition to the enumerated branches.
        seed: Seed of the random starting points.
        beam_width: Partial branch assignments kept during enumeration.
        indistinguishability: Photon overlap the visibilities were taken with.
        residual_threshold: Largest mean squared residual of a consistent unweighted fit.
        chi2_threshold: Largest reduced chi-square of a consistent weighted fit.
        strict: Raise instead of flagging inconsistent data.
        max_workers: Threads used to polish the starting points.

    Returns:
        The gauge-fixed estimate; `residual` is the unweighted sum of squared deviations.

    Raises:
        ValidationException: If the singles and visibilities do not describe one device.
        ParameterException: If an argument is out of range.
        UnderdeterminedException: If some phase is not linked to the gauge by any record.
        InconsistentDataException: If `strict` and the best fit misses the threshold.
    """
    if not singles:
        raise ValidationException("Reconstruction needs single-photon distributions")
    if restarts < 0:
        raise ParameterException(f"restarts must be non-negative, got {restarts}")
    if not 0.0 < indistinguishability <= 1.0:
        raise ParameterException(f"indistinguishability must lie in (0, 1], got {indistinguishability}")
    input_modes = [s.input_mode for s in singles]
    if len(set(input_modes)) != len(input_modes):
        raise ValidationException(f"Duplicate input modes in singles: {input_modes}")
    n = singles[0].probabilities.size
    if any(s.probabilities.size != n for s in singles):
        raise ValidationException("Singles distributions differ in length")

    moduli = np.sqrt(np.column_stack([s.probabilities for s in singles]))
    column_of = {mode: c for c, mode in enumerate(input_modes)}

    unknowns: Dict[Pair, int] = {}
    unconstrained: List[Pair] = []
    for k in range(1, n):
        for c in range(1, len(input_modes)):
            if moduli[k, c] < ZERO_MODULUS:
                unconstrained.append((k + 1, input_modes[c]))
            else:
                unknowns[(k, c)] = len(unknowns)

    rows = []
    for record in visibilities:
        for mode in record.input_pair:
            if mode not in column_of:
                raise ValidationException(f"Visibility input mode {mode} has no singles measurement")
        k, l = record.output_pair[0] - 1, record.output_pair[1] - 1
        if k == l or not (0 <= k < n and 0 <= l < n):
            raise ValidationException(f"Invalid output pair {record.output_pair} for {n} outputs")
        a, b = column_of[record.input_pair[0]], column_of[record.input_pair[1]]
        direct = moduli[k, a] * moduli[l, b]
        exchange = moduli[k, b] * moduli[l, a]
        norm = direct**2 + exchange**2
        weight = 2.0 * direct * exchange / norm if norm > 0 else 0.0
        entries = [((k, a), 1), ((l, b), 1), ((k, b), -1), ((l, a), -1)]
        terms = [(unknowns[entry], sign) for entry, sign in entries if entry in unknowns]
        rows.append(
            {
                "visibility": record.visibility,
                "weight": weight,
                "terms": terms,
                "anchored": len(terms) < len(entries),
                "uncertainty": record.uncertainty,
            }
        )
    if not rows and unknowns:
        raise UnderdeterminedException("No visibility data to fix the phases", sorted((k + 1, input_modes[c]) for k, c in unknowns))

    informative = np.array([row["weight"] > 1e-12 for row in rows], dtype=bool)
    _check_connected(unknowns, rows, informative, input_modes)

    problem = _PhaseProblem(moduli, unknowns, rows, indistinguishability)
    rng = make_rng(seed)
    starts = _branch_seeds(problem, informative, beam_width)
    starts += [rng.uniform(-np.pi, np.pi, problem.n_unknowns) for _ in range(restarts)]

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            candidates = list(executor.map(lambda x0: _polish(problem, x0), starts))
    else:
        candidates = [_polish(problem, x0) for x0 in starts]
    cost, x = _select(candidates)

    phases = np.zeros_like(moduli)
    for (k, c), var in unknowns.items():
        phases[k, c] = x[var]

    flags = []
    count = len(rows)
    deviations = problem.deviations(x)
    residual = float(np.sum(deviations**2))
    max_deviation = float(np.max(np.abs(deviations))) if count else 0.0
    if count and max_deviation > 10.0 * np.sqrt(residual / count) + 1e-9:
        flags.append(f"largest visibility deviation {max_deviation:.3e} exceeds 10x the rms residual")
    if count and problem.weighted:
        chi2 = cost / count
        consistent = chi2 <= chi2_threshold
        summary = f"reduced chi-square {chi2:.3f}"
        margin = chi2_threshold
    else:
        mean_square = residual / count if count else 0.0
        consistent = mean_square <= residual_threshold
        summary = f"mean squared residual {mean_square:.3e}"
        margin = residual_threshold * max(count, 1)
    if not consistent:
        flags.append(f"inconsistent visibility data: {summary}")
        if strict:
            raise InconsistentDataException(f"Visibility data inconsistent with any submatrix: {summary}", residual)
        logger.warning(f"Reconstruction flagged inconsistent: {summary}")

    alternatives = _alternative_branches(candidates, x, cost + margin)
    if alternatives:
        flags.append(f"ambiguous phase branches: {alternatives} distinct solutions fit within {margin:.3g} of the best cost")
        logger.warning(f"{alternatives} alternative phase branches fit the visibilities almost as well as the estimate")
    if unconstrained:
        flags.append(f"zero-modulus entries with phase set to 0: {unconstrained}")

    logger.info(f"Reconstructed {n}x{len(input_modes)} submatrix from {count} visibilities, residual={residual:.3e}")
    return SubmatrixEstimate(
        input_modes=input_modes,
        moduli=moduli,
        phases=phases,
        residual=residual,
        alternative_branches=alternatives,
        unconstrained=unconstrained,
        consistent=consistent,
        flags=flags,
    )


def _alternative_branches(candidates: List[Tuple[float, np.ndarray]], best: np.ndarray, ceiling: float) -> int:
    """Number of distinct fitted phase vectors, other than `best` and its conjugate, with cost <= ceiling."""
    found: List[np.ndarray] = []
    for cost, x in sorted(candidates, key=lambda item: item[0]):
        if cost > ceiling:
            break
        known = [best, *found]
        if any(
            np.max(np.abs(_wrap(x - y)), initial=0.0) < BRANCH_SEPARATION
            or np.max(np.abs(_wrap(x + y)), initial=0.0) < BRANCH_SEPARATION
            for y in known
        ):
            continue
        found.append(x)
    return len(found)


def _check_connected(unknowns: Dict[Pair, int], rows: List[dict], informative: np.ndarray, input_modes: List[int]) -> None:
    """Every unknown phase must be linked to the gauge-fixed phases through informative records."""
    n_nodes = len(unknowns) + 1
    root = len(unknowns)
    src, dst = [], []
    for row, useful in zip(rows, informative):
        if not useful or not row["terms"]:
            continue
        nodes = [var for var, _ in row["terms"]]
        if row["anchored"]:
            nodes.append(root)
        src.extend(nodes[:-1])
        dst.extend(nodes[1:])
    graph = coo_matrix((np.ones(len(src)), (src, dst)), shape=(n_nodes, n_nodes))
    _, labels = connected_components(graph, directed=False)
    loose = [
        (k + 1, input_modes[c]) for (k, c), var in unknowns.items() if labels[var] != labels[root]
    ]
    if loose:
        raise UnderdeterminedException(
            f"Visibility constraints leave {len(loose)} phases undetermined (output, input): {loose}", loose
        )


def predict_correlation(estimate: SubmatrixEstimate, pair: PairInput) -> CorrelationMatrix:
    """Correlation matrix for `pair` evaluated from the reconstructed amplitudes, renormalized."""
    a = estimate.column(pair.mode_i)
    b = estimate.column(pair.mode_j)
    gamma = correlation_from_columns(a, b, pair.indistinguishability)
    return CorrelationMatrix.normalized(gamma)


def _gaussian_dip(tau, floor, depth, center, width):
    return floor * (1.0 - depth * np.exp(-(((tau - center) / width) ** 2)))


def fit_dip_curve(delays: Sequence[float], coincidences: Sequence[float]) -> DipFit:
    """Least-squares Gaussian dip (or peak) fit of a delay scan; the fitted depth is the visibility."""
    tau = np.asarray(delays, dtype=float)
    y = np.asarray(coincidences, dtype=float)
    if tau.size < 4 or tau.size != y.size:
        raise ParameterException("A dip fit needs at least four matching delay/coincidence points")

    floor = float(np.median(y))
    if floor <= 0:
        floor = float(np.max(y))
    if floor <= 0:
        raise NumericalException("Delay scan has no coincidences")
    extreme = int(np.argmin(y)) if abs(y.min() - floor) >= abs(y.max() - floor) else int(np.argmax(y))
    p0 = [floor, 1.0 - y[extreme] / floor, tau[extreme], max(np.ptp(tau) / 6.0, 1e-12)]
    try:
        params, covariance = curve_fit(_gaussian_dip, tau, y, p0=p0, maxfev=20000)
    except RuntimeError as e:
        logger.error(f"Dip fit failed: {e}")
        raise NumericalException(f"Gaussian dip fit did not converge: {e}")
    depth_sigma = float(np.sqrt(covariance[1, 1])) if np.isfinite(covariance[1, 1]) else None
    return DipFit(
        floor=float(params[0]),
        depth=float(params[1]),
        center=float(params[2]),
        width=float(abs(params[3])),
        depth_uncertainty=depth_sigma,
    )


def visibility_from_dip(input_pair: Pair, output_pair: Pair, delays: Sequence[float], coincidences: Sequence[float]) -> VisibilityRecord:
    fit = fit_dip_curve(delays, coincidences)
    return VisibilityRecord(
        input_pair=input_pair,
        output_pair=output_pair,
        visibility=fit.visibility,
        uncertainty=fit.depth_uncertainty,
    )

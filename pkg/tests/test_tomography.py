import numpy as np
import pytest
from pydantic import ValidationError

from src.exceptions.simulation_exceptions import (
    InconsistentDataException,
    NumericalException,
    ParameterException,
    UnderdeterminedException,
    ValidationException,
)
from src.simulation.correlation import (
    PairInput,
    classical_correlation,
    partial_correlation,
    quantum_correlation,
    singles_distribution,
)
from src.simulation.evolution import UnitaryMatrix
from src.simulation.metrics import similarity
from src.simulation.seeding import make_rng
from src.simulation.tomography import (
    ScanPlanMode,
    SubmatrixEstimate,
    VisibilityRecord,
    fit_dip_curve,
    gauge_fixed,
    plan_scans,
    predict_correlation,
    reconstruct_submatrix,
    sample_singles,
    sample_visibility,
    simulate_visibility,
    visibility_from_dip,
)

from .oracles import haar_unitary

INPUTS = [1, 8, 9]


def _noiseless_data(u, input_modes, mode):
    singles = [singles_distribution(u, m) for m in input_modes]
    records = [simulate_visibility(u, ins, outs) for ins, outs in plan_scans(input_modes, u.dim, mode)]
    return singles, records


def _matches_up_to_conjugation(estimate, truth, atol):
    target = gauge_fixed(truth)
    found = estimate.amplitudes()
    return np.allclose(found, target, atol=atol) or np.allclose(found, target.conj(), atol=atol)


def _exact_estimate(u, input_modes):
    fixed = gauge_fixed(u.entries[:, [m - 1 for m in input_modes]])
    phases = np.angle(fixed)
    phases[0, :] = 0.0
    phases[:, 0] = 0.0
    return SubmatrixEstimate(input_modes=input_modes, moduli=np.abs(fixed), phases=phases, residual=0.0)


class TestVisibility:
    def test_balanced_coupler_has_full_visibility(self, coupler):
        assert simulate_visibility(coupler, (1, 2), (1, 2)).visibility == pytest.approx(1.0, abs=1e-12)

    def test_identity_has_no_interference(self):
        assert simulate_visibility(UnitaryMatrix.identity(3), (1, 2), (1, 2)).visibility == 0.0

    def test_agrees_with_correlation_module(self, haar9):
        pair = PairInput(mode_i=2, mode_j=6)
        quantum = quantum_correlation(haar9, pair)
        classical = classical_correlation(haar9, pair)
        for k, l in [(1, 2), (3, 7), (5, 9)]:
            expected = (classical.at((k, l)) - quantum.at((k, l))) / classical.at((k, l))
            assert simulate_visibility(haar9, (2, 6), (k, l)).visibility == pytest.approx(expected, abs=1e-12)

    def test_invariant_under_rephasing_and_conjugation(self, haar9):
        rng = np.random.default_rng(5)
        rows = np.exp(1j * rng.uniform(-np.pi, np.pi, 9))
        cols = np.exp(1j * rng.uniform(-np.pi, np.pi, 9))
        rephased = UnitaryMatrix(entries=rows[:, None] * haar9.entries * cols[None, :])
        conjugated = UnitaryMatrix(entries=haar9.entries.conj())
        for ins, outs in plan_scans(INPUTS, 9, ScanPlanMode.FULL)[:20]:
            v = simulate_visibility(haar9, ins, outs).visibility
            assert simulate_visibility(rephased, ins, outs).visibility == pytest.approx(v, abs=1e-12)
            assert simulate_visibility(conjugated, ins, outs).visibility == pytest.approx(v, abs=1e-12)

    def test_bunched_output_rejected(self, coupler):
        with pytest.raises(ValidationException):
            simulate_visibility(coupler, (1, 2), (2, 2))

    def test_record_validation(self):
        with pytest.raises(ValidationError):
            VisibilityRecord(input_pair=(1, 1), output_pair=(1, 2), visibility=0.1)
        with pytest.raises(ValidationError):
            VisibilityRecord(input_pair=(1, 2), output_pair=(1, 2), visibility=1.5)

    def test_sampled_visibility_close_to_ideal(self, haar9):
        ideal = simulate_visibility(haar9, (1, 9), (2, 3)).visibility
        record = sample_visibility(haar9, (1, 9), (2, 3), 10**7, make_rng(4))
        assert record.uncertainty > 0
        assert abs(record.visibility - ideal) <= 5 * record.uncertainty

    def test_events_count_reference_coincidences(self, haar9):
        # a weak output pair still records about `events` delayed coincidences
        records = [sample_visibility(haar9, (1, 9), (k, k + 1), 10**5, make_rng(k)) for k in range(1, 9)]
        assert all(r.uncertainty < 0.01 for r in records)

    def test_unreachable_outputs_report_no_visibility(self):
        record = sample_visibility(UnitaryMatrix.identity(4), (1, 2), (3, 4), 1000, make_rng(0))
        assert record.visibility == 0.0
        assert record.uncertainty == 1.0

    def test_sampled_singles(self, haar9):
        singles = sample_singles(haar9, 4, 10**6, make_rng(1))
        assert singles.input_mode == 4
        assert np.allclose(singles.probabilities, np.abs(haar9.entries[:, 3]) ** 2, atol=5e-3)


class TestScanPlan:
    @pytest.mark.parametrize(
        "inputs, n_outputs, mode, expected",
        [
            (INPUTS, 9, ScanPlanMode.COMPACT, 24),
            ([1, 2], 2, ScanPlanMode.SPANNING, 1),
            (INPUTS, 9, ScanPlanMode.FULL, 108),
            (INPUTS, 9, ScanPlanMode.SPANNING, 45),
        ],
    )
    def test_plan_sizes(self, inputs, n_outputs, mode, expected):
        assert len(plan_scans(inputs, n_outputs, mode)) == expected

    def test_compact_plan_layout(self):
        plan = plan_scans(INPUTS, 9, "compact")
        assert ((1, 8), (1, 2)) in plan
        assert ((1, 9), (1, 2)) in plan
        assert ((1, 9), (2, 3)) in plan
        assert ((8, 9), (1, 5)) in plan
        assert ((8, 9), (2, 3)) not in plan
        assert ((1, 9), (1, 5)) not in plan

    @pytest.mark.parametrize("inputs, n_outputs", [([1], 9), ([1, 1], 9), ([1, 2], 1)])
    def test_invalid_plans(self, inputs, n_outputs):
        with pytest.raises(ParameterException):
            plan_scans(inputs, n_outputs)


class TestReconstruction:
    def test_full_plan_recovers_columns(self, haar9):
        singles, records = _noiseless_data(haar9, INPUTS, ScanPlanMode.FULL)
        estimate = reconstruct_submatrix(singles, records, seed=3)
        assert estimate.consistent
        assert estimate.residual < 1e-12
        assert estimate.input_modes == INPUTS
        assert _matches_up_to_conjugation(estimate, haar9.entries[:, [0, 7, 8]], atol=1e-6)

    def test_spanning_plan_recovers_columns(self, haar9):
        singles, records = _noiseless_data(haar9, INPUTS, ScanPlanMode.SPANNING)
        estimate = reconstruct_submatrix(singles, records, seed=3, max_workers=4)
        assert _matches_up_to_conjugation(estimate, haar9.entries[:, [0, 7, 8]], atol=1e-6)

    def test_compact_plan_predicts_correlations(self, haar9):
        singles, records = _noiseless_data(haar9, INPUTS, ScanPlanMode.COMPACT)
        estimate = reconstruct_submatrix(singles, records)
        pair = PairInput(mode_i=1, mode_j=9)
        assert similarity(predict_correlation(estimate, pair), quantum_correlation(haar9, pair)) >= 0.999

    def test_coupler(self, coupler):
        singles, records = _noiseless_data(coupler, [1, 2], ScanPlanMode.SPANNING)
        estimate = reconstruct_submatrix(singles, records)
        # gauge-fixed coupler is [[c, s], [s, -c]]
        assert np.allclose(estimate.amplitudes(), np.array([[1, 1], [1, -1]]) / np.sqrt(2), atol=1e-6)

    def test_same_seed_same_estimate(self, haar9):
        singles, records = _noiseless_data(haar9, INPUTS, ScanPlanMode.COMPACT)
        first = reconstruct_submatrix(singles, records, seed=10)
        second = reconstruct_submatrix(singles, records, seed=10)
        assert np.array_equal(first.phases, second.phases)

    def test_noisy_visibilities_stay_consistent(self, haar9):
        rng = np.random.default_rng(17)
        singles, records = _noiseless_data(haar9, INPUTS, ScanPlanMode.FULL)
        noisy = [
            VisibilityRecord(
                input_pair=r.input_pair,
                output_pair=r.output_pair,
                visibility=float(np.clip(r.visibility + rng.normal(0.0, 0.01), -1.0, 1.0)),
                uncertainty=0.01,
            )
            for r in records
        ]
        estimate = reconstruct_submatrix(singles, noisy)
        assert estimate.consistent
        pair = PairInput(mode_i=1, mode_j=9)
        assert similarity(predict_correlation(estimate, pair), quantum_correlation(haar9, pair)) >= 0.99

    def test_missing_visibilities_leave_phases_undetermined(self, haar9):
        singles = [singles_distribution(haar9, m) for m in INPUTS]
        with pytest.raises(UnderdeterminedException) as excinfo:
            reconstruct_submatrix(singles, [])
        assert len(excinfo.value.unconstrained) == 16

    def test_unconnected_input_is_reported(self, haar9):
        singles = [singles_distribution(haar9, m) for m in INPUTS]
        records = [simulate_visibility(haar9, (1, 8), (1, l)) for l in range(2, 10)]
        with pytest.raises(UnderdeterminedException) as excinfo:
            reconstruct_submatrix(singles, records)
        assert all(mode == 9 for _, mode in excinfo.value.unconstrained)

    def test_contradicting_records(self, coupler):
        singles = [singles_distribution(coupler, m) for m in (1, 2)]
        records = [
            VisibilityRecord(input_pair=(1, 2), output_pair=(1, 2), visibility=1.0),
            VisibilityRecord(input_pair=(1, 2), output_pair=(1, 2), visibility=0.5),
        ]
        with pytest.raises(InconsistentDataException):
            reconstruct_submatrix(singles, records, strict=True)
        estimate = reconstruct_submatrix(singles, records)
        assert not estimate.consistent
        assert any("inconsistent" in flag for flag in estimate.flags)

    def test_zero_modulus_entries_flagged(self, coupler):
        # coupler on modes 1 and 2, mode 3 untouched
        entries = np.eye(3, dtype=complex)
        entries[:2, :2] = coupler.entries
        u = UnitaryMatrix(entries=entries)
        singles, records = _noiseless_data(u, [1, 2], ScanPlanMode.SPANNING)
        estimate = reconstruct_submatrix(singles, records)
        assert estimate.unconstrained == [(3, 2)]
        assert estimate.phases[2, 1] == 0.0
        assert abs(estimate.phases[1, 1]) == pytest.approx(np.pi, abs=1e-6)
        assert any("zero-modulus" in flag for flag in estimate.flags)

    def test_visibility_from_unmeasured_input(self, coupler):
        singles = [singles_distribution(coupler, 1), singles_distribution(coupler, 2)]
        records = [VisibilityRecord(input_pair=(1, 3), output_pair=(1, 2), visibility=0.0)]
        with pytest.raises(ValidationException):
            reconstruct_submatrix(singles, records)

    def test_invalid_arguments(self, coupler):
        singles = [singles_distribution(coupler, 1), singles_distribution(coupler, 2)]
        with pytest.raises(ValidationException):
            reconstruct_submatrix([], [])
        with pytest.raises(ParameterException):
            reconstruct_submatrix(singles, [], restarts=-1)
        with pytest.raises(ParameterException):
            reconstruct_submatrix(singles, [], indistinguishability=0.0)

    @pytest.mark.slow
    def test_poisson_data(self, haar9):
        rng = make_rng(2024)
        singles = [sample_singles(haar9, m, 10**6, rng) for m in INPUTS]
        records = [
            sample_visibility(haar9, ins, outs, 10**6, rng) for ins, outs in plan_scans(INPUTS, 9, ScanPlanMode.SPANNING)
        ]
        estimate = reconstruct_submatrix(singles, records)
        pair = PairInput(mode_i=1, mode_j=9)
        assert similarity(predict_correlation(estimate, pair), quantum_correlation(haar9, pair)) >= 0.99

    def test_uncertainties_weight_the_fit(self, haar9):
        singles, records = _noiseless_data(haar9, INPUTS, ScanPlanMode.SPANNING)
        corrupted = ((1, 8), (4, 5))
        weighted = [
            r.model_copy(
                update={
                    "visibility": float(np.clip(r.visibility + 0.3, -1.0, 1.0)),
                    "uncertainty": 1.0,
                }
            )
            if (r.input_pair, r.output_pair) == corrupted
            else r.model_copy(update={"uncertainty": 1e-3})
            for r in records
        ]
        estimate = reconstruct_submatrix(singles, weighted, seed=3)
        assert estimate.consistent
        assert estimate.residual > 0.01
        assert _matches_up_to_conjugation(estimate, haar9.entries[:, [0, 7, 8]], atol=1e-3)

    def test_three_star_plan_is_ambiguous(self, haar9):
        singles = [singles_distribution(haar9, m) for m in INPUTS]
        records = [
            simulate_visibility(haar9, input_pair, (1, l))
            for input_pair in [(1, 8), (1, 9), (8, 9)]
            for l in range(2, 10)
        ]
        estimate = reconstruct_submatrix(singles, records)
        assert estimate.consistent
        assert estimate.alternative_branches > 0
        assert any("ambiguous phase branches" in flag for flag in estimate.flags)

    def test_overdetermined_plan_is_not_ambiguous(self, haar9):
        singles, records = _noiseless_data(haar9, INPUTS, ScanPlanMode.FULL)
        estimate = reconstruct_submatrix(singles, records, seed=3)
        assert estimate.alternative_branches == 0

    def test_different_seeds_agree_up_to_gauge(self, haar9):
        singles, records = _noiseless_data(haar9, INPUTS, ScanPlanMode.SPANNING)
        target = gauge_fixed(haar9.entries[:, [0, 7, 8]])
        for seed in (0, 1, 99):
            estimate = reconstruct_submatrix(singles, records, seed=seed, restarts=8)
            found = estimate.amplitudes()
            assert np.allclose(found, target, atol=1e-6) or np.allclose(found, target.conj(), atol=1e-6)

    @pytest.mark.slow
    def test_compact_plan_under_poisson_noise(self):
        pair = PairInput(mode_i=1, mode_j=9)
        scores = []
        for seed in range(20):
            u = UnitaryMatrix(entries=haar_unitary(9, np.random.default_rng(seed)))
            rng = make_rng(seed)
            singles = [sample_singles(u, m, 10**5, rng) for m in INPUTS]
            records = [
                sample_visibility(u, ins, outs, 10**5, rng) for ins, outs in plan_scans(INPUTS, 9, ScanPlanMode.COMPACT)
            ]
            estimate = reconstruct_submatrix(singles, records, seed=seed)
            scores.append(similarity(predict_correlation(estimate, pair), quantum_correlation(u, pair)))
        assert np.median(scores) >= 0.99


class TestPrediction:
    def test_exact_columns_reproduce_partial_correlation(self, haar9):
        estimate = _exact_estimate(haar9, INPUTS)
        for mu in (1.0, 0.6):
            pair = PairInput(mode_i=8, mode_j=9, indistinguishability=mu)
            assert np.allclose(predict_correlation(estimate, pair).values, partial_correlation(haar9, pair).values, atol=1e-9)

    def test_wrong_phase_lowers_similarity(self, haar9):
        estimate = _exact_estimate(haar9, INPUTS)
        phases = estimate.phases.copy()
        phases[3, 2] += np.pi
        shifted = estimate.model_copy(update={"phases": phases})
        pair = PairInput(mode_i=1, mode_j=9)
        truth = quantum_correlation(haar9, pair)
        assert similarity(predict_correlation(shifted, pair), truth) < 0.999

    def test_uncovered_mode(self, haar9):
        with pytest.raises(ValidationException):
            predict_correlation(_exact_estimate(haar9, INPUTS), PairInput(mode_i=1, mode_j=2))

    def test_gauge_violation_rejected(self):
        with pytest.raises(ValidationException):
            SubmatrixEstimate(input_modes=[1, 2], moduli=np.ones((2, 2)), phases=[[0.0, 0.3], [0.0, 0.0]], residual=0.0)


class TestDipFit:
    DELAYS = np.linspace(-4.0, 4.0, 41)

    def test_recovers_dip(self):
        y = 100.0 * (1.0 - 0.9 * np.exp(-(((self.DELAYS - 0.3) / 1.2) ** 2)))
        fit = fit_dip_curve(self.DELAYS, y)
        assert fit.visibility == pytest.approx(0.9, abs=1e-6)
        assert fit.center == pytest.approx(0.3, abs=1e-6)
        assert fit.width == pytest.approx(1.2, abs=1e-6)

    def test_recovers_peak(self):
        y = 50.0 * (1.0 + 0.4 * np.exp(-((self.DELAYS / 0.8) ** 2)))
        record = visibility_from_dip((1, 2), (3, 4), self.DELAYS, y)
        assert record.visibility == pytest.approx(-0.4, abs=1e-6)

    def test_too_few_points(self):
        with pytest.raises(ParameterException):
            fit_dip_curve([0.0, 1.0, 2.0], [1.0, 1.0, 1.0])

    def test_empty_scan(self):
        with pytest.raises(NumericalException):
            fit_dip_curve(self.DELAYS, np.zeros_like(self.DELAYS))

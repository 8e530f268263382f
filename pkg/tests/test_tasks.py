import copy
import json

import numpy as np
import pytest
from pydantic import ValidationError

from src.config.settings import RuntimeSettings
from src.exceptions.simulation_exceptions import SimulationException
from src.handler import TaskHandler
from src.models.experiment import ExperimentConfig, TaskKind
from src.services.output_service import (
    OutputService,
    read_counts,
    read_json,
    read_singles,
    read_visibilities,
)
from src.simulation.correlation import CorrelationMatrix, PairInput, hom_dip_curve, quantum_correlation
from src.simulation.counting import CountRecord, sample_counts
from src.simulation.evolution import UnitaryMatrix
from src.tasks.base_task import BaseTask

from .oracles import load_complex_matrix, load_pair_matrix


def _run(raw: dict, out_dir, max_workers: int = 1):
    config = ExperimentConfig.model_validate(raw)
    handler = TaskHandler(OutputService(out_dir), RuntimeSettings(max_workers=max_workers))
    return handler.handle(config)


def _with_task(raw: dict, task: dict, **sections) -> dict:
    updated = copy.deepcopy(raw)
    updated["task"] = task
    updated.update(sections)
    return updated


@pytest.fixture
def coupler_config() -> dict:
    return {
        "lattice": {
            "geometry": {"kind": "chain", "rows": 1, "cols": 2, "spacing": 1.0},
            "c0": 1.0,
            "d0": 0.5,
            "length": float(np.pi / 4),
        },
        "source": {"inputPair": [1, 2], "indistinguishability": 0.924},
        "detection": {"nPairs": 10000, "seed": 3},
        "task": {"kind": "hom-scan"},
    }


class TestLatticeTasks:
    def test_unitary(self, grid_config, tmp_path):
        result = _run(_with_task(grid_config, {"kind": "unitary"}), tmp_path)
        assert result.files == ["coupling.csv", "unitary.csv", "transition.csv"]
        u = load_complex_matrix(tmp_path / "unitary.csv")
        UnitaryMatrix(entries=u)
        transition = load_pair_matrix(tmp_path / "transition.csv")
        assert np.allclose(transition.sum(axis=0), 1.0)
        assert np.array_equal(transition, np.abs(u) ** 2)

    def test_singles_for_every_input(self, grid_config, tmp_path):
        result = _run(_with_task(grid_config, {"kind": "singles"}), tmp_path)
        assert len(result.files) == 9
        for k in range(1, 10):
            table = np.loadtxt(tmp_path / f"singles_input{k}.csv", delimiter=",", skiprows=1)
            assert table[:, 1].sum() == pytest.approx(1.0)

    def test_singles_for_selected_inputs(self, grid_config, tmp_path):
        result = _run(_with_task(grid_config, {"kind": "singles", "inputs": [5]}), tmp_path)
        assert result.files == ["singles_input5.csv"]

    def test_walk(self, grid_config, tmp_path):
        _run(_with_task(grid_config, {"kind": "walk", "points": 11}), tmp_path)
        table = np.loadtxt(tmp_path / "walk_profile.csv", delimiter=",", skiprows=1)
        assert table.shape == (99, 3)
        per_z = table[:, 2].reshape(11, 9)
        assert np.allclose(per_z.sum(axis=1), 1.0)
        assert per_z[0, 0] == pytest.approx(1.0)
        assert table[-1, 0] == pytest.approx(1.2)


class TestCorrelationTasks:
    def test_corr_files(self, grid_config, tmp_path):
        result = _run(grid_config, tmp_path)
        assert result.task == TaskKind.CORR
        for name in ("gamma_quantum.csv", "gamma_classical.csv", "gamma_partial.csv"):
            table = np.loadtxt(tmp_path / name, delimiter=",", skiprows=1)
            assert table.shape == (45, 3)
            assert table[:, 2].sum() == pytest.approx(1.0, abs=1e-12)
            CorrelationMatrix(values=load_pair_matrix(tmp_path / name))

    def test_violation_outputs(self, grid_config, tmp_path):
        result = _run(_with_task(grid_config, {"kind": "violation"}), tmp_path)
        significance = np.loadtxt(tmp_path / "violation_significance.csv", delimiter=",", skiprows=1)
        assert significance.shape == (36, 5)
        assert np.all(significance[:, 0] < significance[:, 1])
        record = read_counts(tmp_path / "counts.csv", n_modes=9, total_pairs_emitted=20000, seed=7)
        assert CountRecord.model_validate(read_json(tmp_path / "counts.json")) == record
        violation = load_pair_matrix(tmp_path / "violation.csv")
        assert result.metrics["maxViolation"] == pytest.approx(violation[np.triu_indices(9, k=1)].max())

    @pytest.mark.parametrize("name", ["counts.csv", "counts.json"])
    def test_violation_from_measured_counts(self, grid_config, tmp_path, name):
        simulated = _run(_with_task(grid_config, {"kind": "violation"}), tmp_path / "sim")
        task = {"kind": "violation", "countsPath": str(tmp_path / "sim" / name)}
        ingested = _run(_with_task(grid_config, task), tmp_path / "ingested")
        assert ingested.metrics["maxSignificance"] == pytest.approx(simulated.metrics["maxSignificance"], rel=1e-12)
        assert ingested.metrics["maxViolation"] == simulated.metrics["maxViolation"]

    def test_counts_for_another_device_are_rejected(self, grid_config, tmp_path):
        (tmp_path / "counts.csv").write_text("i,j,count\n1,2,10\n1,12,5\n")
        task = {"kind": "violation", "countsPath": str(tmp_path / "counts.csv")}
        with pytest.raises(SimulationException) as excinfo:
            _run(_with_task(grid_config, task), tmp_path / "out")
        assert excinfo.value.error_code == "VALIDATION_ERROR"

    def test_non_negative_export_drops_negative_witness(self, grid_config, tmp_path):
        plain = _run(_with_task(grid_config, {"kind": "violation"}), tmp_path / "plain")
        clipped = _run(_with_task(grid_config, {"kind": "violation", "fig5Compatible": True}), tmp_path / "clipped")
        raw = load_pair_matrix(tmp_path / "plain" / "violation.csv")
        zeroed = load_pair_matrix(tmp_path / "clipped" / "violation.csv")
        assert np.any(raw < 0)
        assert np.all(zeroed >= 0)
        assert np.array_equal(zeroed, np.maximum(raw, 0.0))
        assert plain.metrics["maxViolation"] == clipped.metrics["maxViolation"]

    def test_similarity_report(self, grid_config, tmp_path):
        result = _run(_with_task(grid_config, {"kind": "similarity"}), tmp_path)
        report = read_json(tmp_path / "similarity.json")
        assert set(report) == {
            "indistinguishability",
            "measuredDistinguishableVsClassical",
            "measuredDistinguishableVsQuantum",
            "measuredVsClassical",
            "measuredVsPredicted",
            "quantumVsClassical",
            "recordedPairs",
        }
        assert report["measuredVsPredicted"] > 0.99
        assert report["measuredVsPredicted"] == result.metrics["measuredVsPredicted"]
        assert report["measuredDistinguishableVsClassical"] > 0.99
        assert report["measuredDistinguishableVsQuantum"] < report["measuredDistinguishableVsClassical"]

    def test_hom_scan_fits_source_overlap(self, coupler_config, tmp_path):
        result = _run(coupler_config, tmp_path)
        table = np.loadtxt(tmp_path / "hom_dip.csv", delimiter=",", skiprows=1)
        assert table.shape == (61, 2)
        assert result.metrics["predictedVisibility"] == pytest.approx(0.924, abs=1e-9)
        assert result.metrics["fittedVisibility"] == pytest.approx(0.924, abs=1e-6)
        assert "indistinguishabilityBound" not in result.metrics

    def test_hom_scan_reports_indistinguishability_bound(self, coupler_config, tmp_path):
        coupler_config["task"]["splitterReflectivity"] = 0.47
        result = _run(coupler_config, tmp_path)
        assert result.metrics["indistinguishabilityBound"] == pytest.approx(0.9307, abs=1e-4)


class TestEnsemble:
    @pytest.fixture
    def ensemble_config(self, grid_config) -> dict:
        return _with_task(grid_config, {"kind": "ensemble", "nRealizations": 3}, disorder={"seed": 12})

    def test_single_realization_matches_similarity_task(self, ensemble_config, tmp_path):
        single = copy.deepcopy(ensemble_config)
        single["disorder"] = {"seed": 12, "edgeJitter": 0.2}
        single["task"] = {"kind": "ensemble", "nRealizations": 1}
        ensemble = _run(single, tmp_path / "ensemble")
        similarity = _run(_with_task(single, {"kind": "similarity"}), tmp_path / "similarity")
        assert ensemble.metrics["similarity"]["mean"] == similarity.metrics["measuredVsPredicted"]

    def test_zero_jitter_has_no_spread(self, ensemble_config, tmp_path):
        result = _run(ensemble_config, tmp_path)
        assert result.metrics["similarity"]["std"] == pytest.approx(0.0, abs=1e-15)
        table = np.loadtxt(tmp_path / "ensemble.csv", delimiter=",", skiprows=1)
        assert table.shape == (3, 6)
        assert np.array_equal(table[:, 0], [0, 1, 2])

    def test_deterministic_and_order_independent(self, ensemble_config, tmp_path):
        ensemble_config["disorder"] = {"seed": 12, "edgeJitter": 0.3, "segments": 3}
        _run(ensemble_config, tmp_path / "a")
        _run(ensemble_config, tmp_path / "b", max_workers=3)
        first = (tmp_path / "a" / "ensemble.csv").read_bytes()
        assert first == (tmp_path / "b" / "ensemble.csv").read_bytes()
        assert (tmp_path / "a" / "ensemble_summary.json").read_bytes() == (
            tmp_path / "b" / "ensemble_summary.json"
        ).read_bytes()

    def test_seeds_are_written_exactly(self, ensemble_config, tmp_path):
        ensemble_config["disorder"] = {"seed": 2**64 - 1}
        _run(ensemble_config, tmp_path)
        lines = (tmp_path / "ensemble.csv").read_text().splitlines()
        assert lines[0] == "realization,seed,similarity,max_significance,ipr_two_photon,ipr_singles"
        assert lines[1].split(",")[1] == str(2**64 - 1)

    @pytest.mark.slow
    def test_disorder_spreads_results(self, ensemble_config, tmp_path):
        ensemble_config["disorder"] = {"seed": 1, "edgeJitter": 0.3}
        ensemble_config["task"]["nRealizations"] = 20
        result = _run(ensemble_config, tmp_path)
        assert result.metrics["iprTwoPhoton"]["std"] > 0
        assert 0 < result.metrics["similarity"]["min"] <= 1


class TestTomographyTask:
    @pytest.fixture
    def tomography_config(self, grid_config) -> dict:
        return _with_task(grid_config, {"kind": "tomography", "inputModes": [1, 8, 9]})

    def test_noiseless_reconstruction(self, tomography_config, tmp_path):
        result = _run(tomography_config, tmp_path)
        report = read_json(tmp_path / "tomography.json")
        assert report["scans"] == 45
        assert report["consistent"] is True
        assert report["predictionPair"] == [1, 9]
        assert report["similarity"] >= 0.999
        assert result.metrics["similarity"] == report["similarity"]
        plan = np.loadtxt(tmp_path / "scan_plan.csv", delimiter=",", skiprows=1)
        assert plan.shape == (45, 5)
        estimate = read_json(tmp_path / "estimate.json")
        assert estimate["inputModes"] == [1, 8, 9]

    def test_ingesting_exported_data(self, tomography_config, tmp_path):
        simulated = _run(tomography_config, tmp_path / "sim")
        ingest = copy.deepcopy(tomography_config)
        ingest["task"]["singlesPath"] = str(tmp_path / "sim" / "singles.csv")
        ingest["task"]["visibilitiesPath"] = str(tmp_path / "sim" / "visibilities.csv")
        ingested = _run(ingest, tmp_path / "ingested")
        assert ingested.metrics["similarity"] == pytest.approx(simulated.metrics["similarity"], abs=1e-9)
        records = read_visibilities(tmp_path / "ingested" / "visibilities.csv")
        assert [r.scan_id for r in records] == list(range(1, 46))
        assert all(r.uncertainty is None for r in records)

    def test_ingesting_json_tables(self, tomography_config, tmp_path):
        simulated = _run(tomography_config, tmp_path / "sim")
        singles = read_singles(tmp_path / "sim" / "singles.csv")
        records = read_visibilities(tmp_path / "sim" / "visibilities.csv")
        (tmp_path / "singles.json").write_text(
            json.dumps([{"inputMode": s.input_mode, "probabilities": s.probabilities.tolist()} for s in singles])
        )
        (tmp_path / "visibilities.json").write_text(json.dumps([r.model_dump(mode="json", by_alias=True) for r in records]))
        ingest = copy.deepcopy(tomography_config)
        ingest["task"]["singlesPath"] = str(tmp_path / "singles.json")
        ingest["task"]["visibilitiesPath"] = str(tmp_path / "visibilities.json")
        ingested = _run(ingest, tmp_path / "ingested")
        assert ingested.metrics["similarity"] == pytest.approx(simulated.metrics["similarity"], abs=1e-9)

    def test_ingesting_delay_scans(self, tomography_config, tmp_path):
        _run(tomography_config, tmp_path / "sim")
        u = BaseTask.unitary(ExperimentConfig.model_validate(tomography_config))
        delays = np.linspace(-3.0, 3.0, 41)
        curves = []
        for r in read_visibilities(tmp_path / "sim" / "visibilities.csv"):
            pair = PairInput(mode_i=r.input_pair[0], mode_j=r.input_pair[1], indistinguishability=1.0)
            curve = hom_dip_curve(u, pair, r.output_pair, delays, 1.0)
            curves.append(
                {
                    "inputPair": list(r.input_pair),
                    "outputPair": list(r.output_pair),
                    "delays": delays.tolist(),
                    "coincidences": [value for _, value in curve],
                    "scanId": r.scan_id,
                }
            )
        (tmp_path / "dips.json").write_text(json.dumps(curves))
        ingest = copy.deepcopy(tomography_config)
        ingest["task"]["singlesPath"] = str(tmp_path / "sim" / "singles.csv")
        ingest["task"]["dipCurvesPath"] = str(tmp_path / "dips.json")
        result = _run(ingest, tmp_path / "ingested")
        assert result.metrics["similarity"] >= 0.999
        fitted = read_visibilities(tmp_path / "ingested" / "visibilities.csv")
        assert [r.scan_id for r in fitted] == list(range(1, 46))

    def test_delay_scans_need_singles(self, tomography_config, tmp_path):
        tomography_config["task"]["dipCurvesPath"] = str(tmp_path / "dips.json")
        with pytest.raises(ValidationError):
            ExperimentConfig.model_validate(tomography_config)

    def test_prediction_pair_falls_back_to_first_modes(self, tomography_config, tmp_path):
        tomography_config["task"]["inputModes"] = [2, 3, 5]
        result = _run(tomography_config, tmp_path)
        assert result.metrics["predictionPair"] == [2, 3]

    @pytest.mark.slow
    def test_sampled_reconstruction(self, tomography_config, tmp_path):
        tomography_config["task"]["events"] = 10**6
        result = _run(tomography_config, tmp_path)
        assert result.metrics["similarity"] >= 0.99
        records = read_visibilities(tmp_path / "visibilities.csv")
        assert all(r.uncertainty is not None for r in records)


class TestOutputRoundTrip:
    def test_matrices_survive_exactly(self, haar9, tmp_path):
        service = OutputService(tmp_path)
        gamma = quantum_correlation(haar9, PairInput(mode_i=1, mode_j=9))
        service.write_pair_matrix("gamma.csv", gamma.values)
        service.write_complex_matrix("u.csv", haar9.entries)
        assert np.array_equal(CorrelationMatrix(values=load_pair_matrix(tmp_path / "gamma.csv")).values, gamma.values)
        assert np.array_equal(load_complex_matrix(tmp_path / "u.csv"), haar9.entries)
        assert service.written == ["gamma.csv", "u.csv"]

    def test_counts_and_singles(self, haar9, tmp_path):
        service = OutputService(tmp_path)
        gamma = quantum_correlation(haar9, PairInput(mode_i=1, mode_j=9))
        record = sample_counts(gamma, 5000, seed=2**63)
        service.write_counts("counts.csv", record)
        assert read_counts(tmp_path / "counts.csv", n_modes=9, total_pairs_emitted=5000, seed=2**63) == record

    def test_header_mismatch(self, tmp_path):
        (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
        with pytest.raises(SimulationException) as excinfo:
            read_singles(tmp_path / "bad.csv")
        assert excinfo.value.error_code == "VALIDATION_ERROR"

    def test_malformed_json_is_a_validation_error(self, tmp_path):
        (tmp_path / "singles.json").write_text('[{"inputMode": 1}]')
        (tmp_path / "broken.json").write_text("[{")
        for name in ("singles.json", "broken.json"):
            with pytest.raises(SimulationException) as excinfo:
                read_singles(tmp_path / name)
            assert excinfo.value.error_code == "VALIDATION_ERROR"
            assert excinfo.value.failed_step == "ingestion"

    def test_missing_file(self, tmp_path):
        with pytest.raises(SimulationException) as excinfo:
            read_singles(tmp_path / "missing.csv")
        assert excinfo.value.exit_code == 4


class TestHandler:
    def test_unexpected_errors_are_wrapped(self, grid_config, tmp_path, monkeypatch):
        handler = TaskHandler(OutputService(tmp_path))

        def explode(config):
            raise RuntimeError("boom")

        monkeypatch.setattr(handler.runners[TaskKind.CORR], "run", explode)
        with pytest.raises(SimulationException) as excinfo:
            handler.handle(ExperimentConfig.model_validate(grid_config))
        assert excinfo.value.error_code == "HANDLER_ERROR"
        assert excinfo.value.failed_step == "task_execution"
        assert excinfo.value.exit_code == 3

    def test_domain_errors_pass_through(self, grid_config, tmp_path):
        grid_config["disorder"] = {"seed": 1, "edgeJitter": 1.0}
        with pytest.raises(SimulationException) as excinfo:
            _run(grid_config, tmp_path)
        assert excinfo.value.error_code == "PARAMETER_ERROR"

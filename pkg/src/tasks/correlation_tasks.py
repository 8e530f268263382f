import logging

import numpy as np

from ..models.experiment import ExperimentConfig, TaskKind, TaskResult
from ..services.output_service import FLOAT_FORMAT, read_counts
from ..simulation.correlation import (
    bunching_probability,
    classical_correlation,
    hom_dip_curve,
    partial_correlation,
    quantum_correlation,
)
from ..simulation.metrics import ViolationMatrix, indistinguishability_bound, max_violation, similarity, violation_matrix
from ..simulation.tomography import fit_dip_curve, simulate_visibility
from .base_task import BaseTask

logger = logging.getLogger(__name__)


class CorrRunner(BaseTask):
    def run(self, config: ExperimentConfig) -> TaskResult:
        u = self.unitary(config)
        pair = config.source.pair()
        quantum = quantum_correlation(u, pair)
        classical = classical_correlation(u, pair)
        partial = partial_correlation(u, pair)

        files = [
            self.output_service.write_pair_matrix("gamma_quantum.csv", quantum.values),
            self.output_service.write_pair_matrix("gamma_classical.csv", classical.values),
            self.output_service.write_pair_matrix("gamma_partial.csv", partial.values),
        ]
        bunching = bunching_probability(quantum)
        return TaskResult(
            task=TaskKind.CORR,
            summary=f"inputs {pair.mode_i},{pair.mode_j}: bunching quantum={bunching:.4f} classical={bunching_probability(classical):.4f}",
            files=files,
            metrics={"bunchingQuantum": bunching, "bunchingClassical": bunching_probability(classical)},
        )


class ViolationRunner(BaseTask):
    """
    Cauchy-Schwarz witness of the predicted correlations plus its significance on
    simulated counts, or on measured counts when the task names a counts file.
    """

    def run(self, config: ExperimentConfig) -> TaskResult:
        u = self.unitary(config)
        if config.task.counts_path is not None:
            record = read_counts(config.task.counts_path, u.dim, bunching_split=config.detection.bunching_split)
            logger.info(f"Ingested {record.total_counts} coincidences from {config.task.counts_path}")
            measurement = self.evaluate(config, partial_correlation(u, config.source.pair()), record)
        else:
            measurement = self.measure(config, u)
        predicted = violation_matrix(measurement.theory)
        value, pair = max_violation(predicted)

        exported = predicted.non_negative_view() if config.fig5_compatible else predicted.values
        files = [
            self.output_service.write_pair_matrix("violation.csv", exported),
            self.output_service.write_counts("counts.csv", measurement.record),
            self.output_service.write_json("counts.json", measurement.record),
        ]
        n = u.dim
        rows, cols = np.triu_indices(n, k=1)
        significance = measurement.significance
        if config.fig5_compatible:
            significance = ViolationMatrix(values=significance).non_negative_view()
        table = np.column_stack(
            [
                rows + 1,
                cols + 1,
                measurement.violation[rows, cols],
                measurement.violation_sigma[rows, cols],
                significance[rows, cols],
            ]
        )
        files.append(
            self.output_service.write_rows(
                "violation_significance.csv",
                ["i", "j", "value", "sigma", "significance"],
                table,
                ["%d", "%d", FLOAT_FORMAT, FLOAT_FORMAT, FLOAT_FORMAT],
            )
        )
        best = self.max_significance(measurement.significance)
        n_violating = int(np.sum(predicted.values[rows, cols] > 0))
        logger.info(f"{n_violating} of {rows.size} output pairs violate the classical bound")
        return TaskResult(
            task=TaskKind.VIOLATION,
            summary=f"max violation V={value:.4f} at {pair}, max significance {best:.2f} sigma",
            files=files,
            metrics={
                "maxViolation": value,
                "maxViolationPair": list(pair),
                "maxSignificance": best,
                "violatingPairs": n_violating,
            },
        )


class SimilarityRunner(BaseTask):
    """
    Similarity of the sampled estimate with theory, plus a second run with fully
    distinguishable photons (same detection seed) compared with the classical prediction.
    """

    def run(self, config: ExperimentConfig) -> TaskResult:
        u = self.unitary(config)
        pair = config.source.pair()
        measurement = self.measure(config, u)
        distinguishable = self.measure(config, u, pair.with_indistinguishability(0.0))
        quantum = quantum_correlation(u, pair)
        classical = classical_correlation(u, pair)

        report = {
            "measuredVsPredicted": similarity(measurement.estimate, measurement.theory),
            "measuredVsClassical": similarity(measurement.estimate, classical),
            "measuredDistinguishableVsClassical": similarity(distinguishable.estimate, classical),
            "measuredDistinguishableVsQuantum": similarity(distinguishable.estimate, quantum),
            "quantumVsClassical": similarity(quantum, classical),
            "indistinguishability": pair.indistinguishability,
            "recordedPairs": measurement.record.total_counts,
        }
        files = [self.output_service.write_json("similarity.json", report)]
        return TaskResult(
            task=TaskKind.SIMILARITY,
            summary=f"S(measured, predicted)={report['measuredVsPredicted']:.5f}",
            files=files,
            metrics=report,
        )


class HomScanRunner(BaseTask):
    """Coincidence rate versus delay at one output pair, with a Gaussian dip fit."""

    def run(self, config: ExperimentConfig) -> TaskResult:
        u = self.unitary(config)
        pair = config.source.pair()
        task = config.task
        tau_c = config.source.coherence_time
        delays = np.linspace(-task.delay_range * tau_c, task.delay_range * tau_c, task.points)
        curve = hom_dip_curve(u, pair, task.output_pair, delays, tau_c)

        files = [self.output_service.write_rows("hom_dip.csv", ["delay", "value"], curve, [FLOAT_FORMAT, FLOAT_FORMAT])]
        predicted = pair.indistinguishability * simulate_visibility(u, config.source.input_pair, task.output_pair).visibility
        fit = fit_dip_curve(delays, [value for _, value in curve])
        report = {
            "inputPair": list(config.source.input_pair),
            "outputPair": list(task.output_pair),
            "predictedVisibility": predicted,
            "fittedVisibility": fit.visibility,
            "fit": fit.model_dump(by_alias=True),
        }
        if task.splitter_reflectivity is not None:
            report["indistinguishabilityBound"] = indistinguishability_bound(
                float(np.clip(fit.visibility, 0.0, 1.0)), task.splitter_reflectivity
            )
        files.append(self.output_service.write_json("hom_scan.json", report))
        return TaskResult(
            task=TaskKind.HOM_SCAN,
            summary=f"visibility at {tuple(task.output_pair)}: predicted={predicted:.4f} fitted={fit.visibility:.4f}",
            files=files,
            metrics=report,
        )

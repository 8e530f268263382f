import logging
from typing import List, Tuple

from ..models.experiment import ExperimentConfig, TaskKind, TaskResult
from ..services.output_service import read_dip_curves, read_singles, read_visibilities
from ..simulation.correlation import PairInput, SinglesDistribution, partial_correlation, singles_distribution
from ..simulation.evolution import UnitaryMatrix
from ..simulation.metrics import similarity
from ..simulation.seeding import make_rng
from ..simulation.tomography import (
    VisibilityRecord,
    plan_scans,
    predict_correlation,
    reconstruct_submatrix,
    sample_singles,
    sample_visibility,
    simulate_visibility,
)
from .base_task import BaseTask

logger = logging.getLogger(__name__)


class TomographyRunner(BaseTask):
    """
    Characterizes the injected columns of the device from singles and HOM visibilities,
    then predicts the source's correlation matrix from the estimate.

    Data is either simulated from the configured lattice (noiseless, or Poisson-sampled
    with `events` reference coincidences per scan and `events` detected photons per
    singles measurement) or ingested from previously exported files.
    """

    def run(self, config: ExperimentConfig) -> TaskResult:
        """
        Raises:
            ParameterException: If the scan plan or the reconstruction inputs are invalid.
            ValidationException: If ingested files are malformed.
            InconsistentDataException: If `strict` and the best fit misses the threshold.
            NumericalException: If a delay scan cannot be fitted.
        """
        task = config.task
        u = self.unitary(config)
        plan = plan_scans(task.input_modes, u.dim, task.plan)

        if task.singles_path is not None:
            singles, visibilities = self._ingest(config)
        else:
            singles, visibilities = self._simulate(config, u, plan)

        estimate = reconstruct_submatrix(
            singles,
            visibilities,
            restarts=task.restarts,
            seed=config.detection.seed,
            indistinguishability=self._fitted_indistinguishability(config),
            strict=task.strict,
            max_workers=self.settings.max_workers,
        )

        pair = self._prediction_pair(config, estimate.input_modes)
        predicted = predict_correlation(estimate, pair)
        truth = partial_correlation(u, pair)
        score = similarity(predicted, truth)

        scan_table = [
            (index + 1, *input_pair, *output_pair) for index, (input_pair, output_pair) in enumerate(plan)
        ]
        files = [
            self.output_service.write_rows(
                "scan_plan.csv", ["scan", "input_i", "input_j", "output_k", "output_l"], scan_table, ["%d"] * 5
            ),
            self.output_service.write_visibilities("visibilities.csv", visibilities),
            self.output_service.write_singles("singles.csv", singles),
            self.output_service.write_json("estimate.json", estimate),
            self.output_service.write_pair_matrix("gamma_predicted.csv", predicted.values),
        ]
        report = {
            "plan": task.plan.value,
            "scans": len(plan),
            "residual": estimate.residual,
            "consistent": estimate.consistent,
            "alternativeBranches": estimate.alternative_branches,
            "flags": estimate.flags,
            "predictionPair": [pair.mode_i, pair.mode_j],
            "similarity": score,
        }
        files.append(self.output_service.write_json("tomography.json", report))
        return TaskResult(
            task=TaskKind.TOMOGRAPHY,
            summary=f"{len(plan)} scans, residual={estimate.residual:.3e}, S(predicted, truth)={score:.5f}",
            files=files,
            metrics=report,
        )

    def _simulate(
        self, config: ExperimentConfig, u: UnitaryMatrix, plan
    ) -> Tuple[List[SinglesDistribution], List[VisibilityRecord]]:
        task = config.task
        if task.events is None:
            singles = [singles_distribution(u, mode) for mode in task.input_modes]
            visibilities = [
                simulate_visibility(u, input_pair, output_pair).model_copy(update={"scan_id": index + 1})
                for index, (input_pair, output_pair) in enumerate(plan)
            ]
            return singles, visibilities

        rng = make_rng(config.detection.seed)
        mu = config.source.indistinguishability
        singles = [sample_singles(u, mode, task.events, rng) for mode in task.input_modes]
        visibilities = [
            sample_visibility(u, input_pair, output_pair, task.events, rng, mu).model_copy(update={"scan_id": index + 1})
            for index, (input_pair, output_pair) in enumerate(plan)
        ]
        logger.info(f"Simulated {len(plan)} noisy scans with {task.events} events each")
        return singles, visibilities

    @staticmethod
    def _ingest(config: ExperimentConfig) -> Tuple[List[SinglesDistribution], List[VisibilityRecord]]:
        """Singles plus visibilities from a table and/or fitted from delay scans."""
        task = config.task
        singles = read_singles(task.singles_path)
        visibilities = read_visibilities(task.visibilities_path) if task.visibilities_path else []
        if task.dip_curves_path:
            curves = read_dip_curves(task.dip_curves_path)
            visibilities += [curve.to_record() for curve in curves]
            logger.info(f"Fitted {len(curves)} delay scans from {task.dip_curves_path}")
        logger.info(f"Ingested {len(singles)} singles and {len(visibilities)} visibilities")
        return singles, visibilities

    @staticmethod
    def _prediction_pair(config: ExperimentConfig, modes: List[int]) -> PairInput:
        source = config.source
        if set(source.input_pair) <= set(modes):
            return source.pair()
        return PairInput(mode_i=modes[0], mode_j=modes[1], indistinguishability=source.indistinguishability)

    @staticmethod
    def _fitted_indistinguishability(config: ExperimentConfig) -> float:
        """Sampled dips carry the source's partial overlap; noiseless and ingested visibilities are taken as ideal."""
        mu = config.source.indistinguishability
        if config.task.events is None or config.task.singles_path is not None or mu <= 0:
            return 1.0
        return mu

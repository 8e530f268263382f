from abc import ABC, abstractmethod
from typing import NamedTuple, Optional

import numpy as np

from ..config.settings import RuntimeSettings
from ..models.experiment import ExperimentConfig, TaskResult
from ..services.output_service import OutputServiceInterface
from ..simulation.correlation import CorrelationMatrix, PairInput, partial_correlation
from ..simulation.counting import CountRecord, estimate_correlation, sample_counts, violation_significance
from ..simulation.evolution import UnitaryMatrix, evolve_segments, evolve_unitary
from ..simulation.lattice import CouplingMatrix, DisorderSpec, apply_disorder, build_coupling_matrix


class Measurement(NamedTuple):
    theory: CorrelationMatrix
    record: CountRecord
    estimate: CorrelationMatrix
    sigma: np.ndarray
    violation: np.ndarray
    violation_sigma: np.ndarray
    significance: np.ndarray


class BaseTask(ABC):
    """
    Abstract base class for task runners.

    A runner turns a validated experiment config into output files and a TaskResult.
    """

    def __init__(self, output_service: OutputServiceInterface, settings: Optional[RuntimeSettings] = None):
        self.output_service = output_service
        self.settings = settings or RuntimeSettings()

    @abstractmethod
    def run(self, config: ExperimentConfig) -> TaskResult:
        pass

    @staticmethod
    def coupling(config: ExperimentConfig) -> CouplingMatrix:
        lattice = config.lattice
        return build_coupling_matrix(lattice.geometry, lattice.c0, lattice.d0, lattice.beta, lattice.cutoff)

    @classmethod
    def unitary(cls, config: ExperimentConfig, disorder: Optional[DisorderSpec] = None) -> UnitaryMatrix:
        """Evolution over the full device length, segmented when a disorder section is present."""
        c = cls.coupling(config)
        disorder = disorder or config.disorder
        if disorder is None:
            return evolve_unitary(c, config.lattice.length)
        return evolve_segments(apply_disorder(c, disorder, config.lattice.length))

    @staticmethod
    def measure(config: ExperimentConfig, u: UnitaryMatrix, pair: Optional[PairInput] = None) -> Measurement:
        """
        Theory correlation for the source pair, simulated counts, and the estimate built from them.

        Args:
            config: Validated experiment; detection settings come from it.
            u: Evolution operator of the device.
            pair: Photon pair to measure instead of the configured source pair.

        Returns:
            The theory, the count record, the estimate with its sigma, and the witness
            with its significance.
        """
        detection = config.detection
        theory = partial_correlation(u, pair or config.source.pair())
        loss = detection.loss_vector(u.dim, config.lattice.length)
        record = sample_counts(theory, detection.n_pairs, loss, detection.bunching_split, detection.seed)
        return BaseTask.evaluate(config, theory, record)

    @staticmethod
    def evaluate(config: ExperimentConfig, theory: CorrelationMatrix, record: CountRecord) -> Measurement:
        """Estimate and witness significance for a simulated or measured count record."""
        detection = config.detection
        loss = detection.loss_vector(record.n_modes, config.lattice.length)
        estimate, sigma = estimate_correlation(record, correct_loss=loss if detection.correct_loss else None)
        violation, violation_sigma, significance = violation_significance(estimate, sigma)
        return Measurement(theory, record, estimate, sigma, violation, violation_sigma, significance)

    @staticmethod
    def max_significance(significance: np.ndarray) -> float:
        if significance.shape[0] < 2:
            return 0.0
        return float(np.max(significance[np.triu_indices(significance.shape[0], k=1)]))

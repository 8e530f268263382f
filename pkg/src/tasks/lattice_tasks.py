import logging

import numpy as np

from ..models.experiment import ExperimentConfig, TaskKind, TaskResult
from ..services.output_service import FLOAT_FORMAT
from ..simulation.correlation import singles_distribution
from ..simulation.evolution import propagation_profile
from ..simulation.metrics import inverse_participation_ratio
from .base_task import BaseTask

logger = logging.getLogger(__name__)


class UnitaryRunner(BaseTask):
    """Exports the nominal coupling matrix, the evolution operator and its transition probabilities."""

    def run(self, config: ExperimentConfig) -> TaskResult:
        c = self.coupling(config)
        u = self.unitary(config)
        logger.info(f"Computed {u.dim}x{u.dim} evolution operator over length {config.lattice.length}")

        files = [
            self.output_service.write_complex_matrix("coupling.csv", c.entries),
            self.output_service.write_complex_matrix("unitary.csv", u.entries),
            self.output_service.write_pair_matrix("transition.csv", u.transition_probabilities(), upper_only=False),
        ]
        deviation = float(np.max(np.abs(u.entries.conj().T @ u.entries - np.eye(u.dim))))
        return TaskResult(
            task=TaskKind.UNITARY,
            summary=f"N={u.dim} unitarity deviation={deviation:.3e}",
            files=files,
            metrics={"dim": u.dim, "unitarityDeviation": deviation},
        )


class SinglesRunner(BaseTask):
    def run(self, config: ExperimentConfig) -> TaskResult:
        u = self.unitary(config)
        inputs = config.task.inputs or list(range(1, u.dim + 1))
        files = []
        iprs = {}
        for mode in inputs:
            singles = singles_distribution(u, mode)
            files.append(self.output_service.write_vector(f"singles_input{mode}.csv", singles.probabilities))
            iprs[str(mode)] = inverse_participation_ratio(singles.probabilities)
        logger.info(f"Exported singles distributions for inputs {inputs}")
        return TaskResult(
            task=TaskKind.SINGLES,
            summary=f"{len(inputs)} singles distributions over {u.dim} outputs",
            files=files,
            metrics={"inverseParticipationRatio": iprs},
        )


class WalkRunner(BaseTask):
    """Single-photon spreading from the source's first input along the propagation axis."""

    def run(self, config: ExperimentConfig) -> TaskResult:
        c = self.coupling(config)
        mode = config.source.input_pair[0]
        z_max = config.task.z_max or config.lattice.length
        z = np.linspace(0.0, z_max, config.task.points)
        profile = propagation_profile(c, mode, z)

        n = c.dim
        table = np.column_stack([np.repeat(z, n), np.tile(np.arange(1, n + 1), z.size), profile.ravel()])
        files = [self.output_service.write_rows("walk_profile.csv", ["z", "i", "value"], table, [FLOAT_FORMAT, "%d", FLOAT_FORMAT])]
        spread = inverse_participation_ratio(profile[-1])
        return TaskResult(
            task=TaskKind.WALK,
            summary=f"input {mode} walked to z={z_max:g}, final IPR={spread:.4f}",
            files=files,
            metrics={"finalIpr": spread},
        )

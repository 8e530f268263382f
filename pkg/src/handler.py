import logging
from typing import Optional

from .config.settings import RuntimeSettings
from .exceptions.simulation_exceptions import SimulationException
from .models.experiment import ExperimentConfig, TaskKind, TaskResult
from .services.output_service import OutputServiceInterface
from .tasks.correlation_tasks import CorrRunner, HomScanRunner, SimilarityRunner, ViolationRunner
from .tasks.ensemble_task import EnsembleRunner
from .tasks.lattice_tasks import SinglesRunner, UnitaryRunner, WalkRunner
from .tasks.tomography_task import TomographyRunner

logger = logging.getLogger(__name__)


class TaskHandler:
    """
    Routes an ExperimentConfig to the runner for its task kind.
    """

    def __init__(self, output_service: OutputServiceInterface, settings: Optional[RuntimeSettings] = None):
        """
        Initialize the handler.

        Args:
            output_service: writer shared by every runner
            settings: runtime settings (worker pool size)
        """
        self.runners = {
            TaskKind.UNITARY: UnitaryRunner(output_service, settings),
            TaskKind.SINGLES: SinglesRunner(output_service, settings),
            TaskKind.CORR: CorrRunner(output_service, settings),
            TaskKind.VIOLATION: ViolationRunner(output_service, settings),
            TaskKind.SIMILARITY: SimilarityRunner(output_service, settings),
            TaskKind.HOM_SCAN: HomScanRunner(output_service, settings),
            TaskKind.ENSEMBLE: EnsembleRunner(output_service, settings),
            TaskKind.TOMOGRAPHY: TomographyRunner(output_service, settings),
            TaskKind.WALK: WalkRunner(output_service, settings),
        }

    def handle(self, config: ExperimentConfig) -> TaskResult:
        """
        Run the configured task.

        Args:
            config: validated experiment config

        Returns:
            TaskResult: summary line, written files and headline metrics

        Raises:
            SimulationException: if the task fails
        """
        try:
            logger.info(f"Routing {config.task_kind.value} task on a {config.n_modes}-site lattice")
            runner = self.runners.get(config.task_kind)
            if runner is None:
                raise SimulationException(
                    f"Unsupported task kind: {config.task_kind}",
                    error_code="UNSUPPORTED_TASK",
                    failed_step="task_selection",
                )
            return runner.run(config)

        except SimulationException:
            raise
        except Exception as e:
            logger.error(f"Unexpected error in handler: {e}")
            raise SimulationException(
                f"Unexpected error running task: {str(e)}",
                error_code="HANDLER_ERROR",
                failed_step="task_execution",
            )

import argparse
import logging
import sys
import traceback
from pathlib import Path
from typing import List, Optional

from src.config.settings import AppConfig, get_config
from src.exceptions.simulation_exceptions import ConfigSchemaException, SimulationException
from src.handler import TaskHandler
from src.models.experiment import ExperimentConfig, TaskFailure, load_experiment_file
from src.repositories.report_repository import ReportRepository
from src.services.output_service import OutputService

logger = logging.getLogger(__name__)

DEFAULT_OUTPUT_DIR = "out"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qwalk",
        description="Two-photon quantum walks in coupled waveguide lattices.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run the task named in an experiment config")
    run.add_argument("config", type=Path, help="experiment config (JSON)")
    run.add_argument("--out", type=Path, default=None, help="output directory")
    run.add_argument(
        "--fig5-compatible",
        action="store_true",
        help="zero the non-violating (negative) witness entries in violation outputs",
    )

    validate = commands.add_parser("validate", help="check an experiment config against the schema")
    validate.add_argument("config", type=Path, help="experiment config (JSON)")
    return parser


def resolve_output_dir(flag: Optional[Path], app_config: AppConfig, experiment: ExperimentConfig) -> Path:
    """--out, then QWALK_OUTPUT_DIR, then the config's output.directory, then ./out."""
    if flag is not None:
        return flag
    if app_config.output.output_dir:
        return Path(app_config.output.output_dir)
    if experiment.output.directory:
        return Path(experiment.output.directory)
    return Path(DEFAULT_OUTPUT_DIR)


def configure_logging(level: str) -> None:
    logging.basicConfig(level=level, stream=sys.stderr, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv: Optional[List[str]] = None, app_config: Optional[AppConfig] = None) -> int:
    args = build_parser().parse_args(argv)
    reports = ReportRepository()
    try:
        app_config = app_config or get_config()
    except ConfigSchemaException as e:
        configure_logging("INFO")
        logger.error(f"Rejected process settings: {e}")
        reports.publish_failure(TaskFailure.from_exception(e, stack_trace=traceback.format_exc()), None)
        return e.exit_code
    configure_logging(app_config.runtime.log_level)
    out_dir = None
    experiment = None
    try:
        experiment = load_experiment_file(args.config)
        if args.command == "validate":
            print(f"valid: task={experiment.task_kind.value} sites={experiment.n_modes}")
            return 0

        if args.fig5_compatible:
            experiment = experiment.with_fig5_compatible()
        out_dir = resolve_output_dir(args.out, app_config, experiment)
        logger.info(f"Running {experiment.task_kind.value} from {args.config}, writing to {out_dir}")

        handler = TaskHandler(OutputService(out_dir), app_config.runtime)
        result = handler.handle(experiment)
        reports.publish_summary(result)
        return 0

    except SimulationException as e:
        logger.error(f"Task failed ({e.error_code}) at {e.failed_step}: {e}")
        failure = TaskFailure.from_exception(
            e,
            task=experiment.task_kind if experiment else None,
            stack_trace=traceback.format_exc(),
        )
        reports.publish_failure(failure, out_dir)
        return e.exit_code
    except Exception as e:
        logger.error(f"Unexpected error: {e}")
        wrapped = SimulationException(str(e), error_code="HANDLER_ERROR", failed_step="cli")
        reports.publish_failure(TaskFailure.from_exception(wrapped, stack_trace=traceback.format_exc()), out_dir)
        return wrapped.exit_code


if __name__ == "__main__":
    sys.exit(main())

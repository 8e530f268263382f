import logging
import sys
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Optional, TextIO

from ..models.experiment import TaskFailure, TaskResult

logger = logging.getLogger(__name__)


class ReportRepositoryInterface(ABC):
    """Interface for publishing task outcomes"""

    @abstractmethod
    def publish_summary(self, result: TaskResult) -> None:
        pass

    @abstractmethod
    def publish_failure(self, failure: TaskFailure, out_dir: Optional[Path] = None) -> None:
        pass


class ReportRepository(ReportRepositoryInterface):
    def __init__(self, stdout: Optional[TextIO] = None, stderr: Optional[TextIO] = None):
        self.stdout = stdout or sys.stdout
        self.stderr = stderr or sys.stderr

    def publish_summary(self, result: TaskResult) -> None:
        """One line per task on stdout."""
        print(f"{result.task.value}: {result.summary}", file=self.stdout)

    def publish_failure(self, failure: TaskFailure, out_dir: Optional[Path] = None) -> None:
        """Machine-readable failure report on stderr and, when possible, as error.json."""
        body = failure.model_dump_json(by_alias=True)
        print(body, file=self.stderr)
        if out_dir is None:
            return
        try:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            (Path(out_dir) / "error.json").write_text(body + "\n", encoding="utf-8")
            logger.info(f"Failure report written to {out_dir}/error.json")
        except OSError as e:
            logger.warning(f"Could not write error report to {out_dir}: {e}")

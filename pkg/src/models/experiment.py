import json
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import Field, NonNegativeFloat, PositiveFloat, PositiveInt, ValidationError, model_validator
from typing_extensions import Annotated, Self

from ..exceptions.simulation_exceptions import ConfigSchemaException, OutputIOException, SimulationException
from ..simulation.correlation import PairInput
from ..simulation.counting import LossVector
from ..simulation.lattice import DisorderSpec, LatticeGeometry
from ..simulation.tomography import ScanPlanMode
from .base import DomainModel


class TaskKind(str, Enum):
    UNITARY = "unitary"
    SINGLES = "singles"
    CORR = "corr"
    VIOLATION = "violation"
    SIMILARITY = "similarity"
    HOM_SCAN = "hom-scan"
    ENSEMBLE = "ensemble"
    TOMOGRAPHY = "tomography"
    WALK = "walk"


class LatticeSection(DomainModel):
    geometry: LatticeGeometry
    c0: PositiveFloat
    d0: PositiveFloat
    beta: Union[float, List[float]] = 0.0
    length: PositiveFloat
    cutoff: Optional[PositiveFloat] = None

    @model_validator(mode="after")
    def _check_beta(self) -> Self:
        if isinstance(self.beta, list) and len(self.beta) != self.geometry.n_sites:
            raise ValueError(f"beta lists {len(self.beta)} values for {self.geometry.n_sites} sites")
        return self


class SourceSection(DomainModel):
    input_pair: Tuple[int, int]
    indistinguishability: float = Field(default=1.0, ge=0.0, le=1.0)
    coherence_time: PositiveFloat = 1.0

    def pair(self) -> PairInput:
        return PairInput(
            mode_i=self.input_pair[0],
            mode_j=self.input_pair[1],
            indistinguishability=self.indistinguishability,
        )


class DetectionSection(DomainModel):
    n_pairs: PositiveInt = 100_000
    efficiencies: Optional[List[float]] = None
    propagation_loss_db: NonNegativeFloat = 0.0
    correct_loss: bool = True
    bunching_split: float = Field(default=0.5, gt=0.0, lt=1.0)
    seed: int = Field(default=0, ge=0, lt=2**64)

    def loss_vector(self, n_modes: int, length: float) -> LossVector:
        propagation = LossVector.from_propagation_loss(n_modes, self.propagation_loss_db, length)
        if self.efficiencies is None:
            return propagation
        return LossVector(efficiencies=self.efficiencies).combine(propagation)


class OutputSection(DomainModel):
    directory: Optional[str] = None
    fig5_compatible: bool = False


class UnitaryTask(DomainModel):
    kind: Literal["unitary"]


class SinglesTask(DomainModel):
    kind: Literal["singles"]
    inputs: Optional[List[int]] = None


class CorrTask(DomainModel):
    kind: Literal["corr"]


class ViolationTask(DomainModel):
    kind: Literal["violation"]
    fig5_compatible: bool = False
    # measured coincidences (CSV i,j,count or counts.json) instead of simulated ones
    counts_path: Optional[str] = None


class SimilarityTask(DomainModel):
    kind: Literal["similarity"]


class HomScanTask(DomainModel):
    kind: Literal["hom-scan"]
    output_pair: Tuple[int, int] = (1, 2)
    delay_range: PositiveFloat = 3.0
    points: int = Field(default=61, ge=4)
    splitter_reflectivity: Optional[float] = Field(default=None, gt=0.0, lt=1.0)


class EnsembleTask(DomainModel):
    kind: Literal["ensemble"]
    n_realizations: PositiveInt


class TomographyTask(DomainModel):
    kind: Literal["tomography"]
    input_modes: List[int] = Field(min_length=2)
    plan: ScanPlanMode = ScanPlanMode.SPANNING
    events: Optional[PositiveInt] = None
    restarts: int = Field(default=32, ge=0)
    strict: bool = False
    singles_path: Optional[str] = None
    visibilities_path: Optional[str] = None
    # JSON list of delay scans, each fitted to one visibility
    dip_curves_path: Optional[str] = None

    @model_validator(mode="after")
    def _check_ingestion(self) -> Self:
        has_visibilities = self.visibilities_path is not None or self.dip_curves_path is not None
        if (self.singles_path is None) != has_visibilities:
            return self
        raise ValueError("singlesPath needs visibilitiesPath or dipCurvesPath, and they need singlesPath")


class WalkTask(DomainModel):
    kind: Literal["walk"]
    z_max: Optional[PositiveFloat] = None
    points: int = Field(default=101, ge=2)


TaskSection = Annotated[
    Union[
        UnitaryTask,
        SinglesTask,
        CorrTask,
        ViolationTask,
        SimilarityTask,
        HomScanTask,
        EnsembleTask,
        TomographyTask,
        WalkTask,
    ],
    Field(discriminator="kind"),
]


class ExperimentConfig(DomainModel):
    lattice: LatticeSection
    disorder: Optional[DisorderSpec] = None
    source: SourceSection
    detection: DetectionSection = Field(default_factory=DetectionSection)
    task: TaskSection
    output: OutputSection = Field(default_factory=OutputSection)

    @model_validator(mode="after")
    def _check_modes(self) -> Self:
        n = self.lattice.geometry.n_sites
        modes = list(self.source.input_pair)
        if isinstance(self.task, SinglesTask) and self.task.inputs:
            modes += self.task.inputs
        if isinstance(self.task, HomScanTask):
            modes += list(self.task.output_pair)
            if self.task.output_pair[0] == self.task.output_pair[1]:
                raise ValueError("hom-scan needs two distinct output modes")
        if isinstance(self.task, TomographyTask):
            modes += self.task.input_modes
            if len(set(self.task.input_modes)) != len(self.task.input_modes):
                raise ValueError("tomography input modes must be distinct")
        for mode in modes:
            if not 1 <= mode <= n:
                raise ValueError(f"mode {mode} outside 1..{n}")
        if self.source.input_pair[0] == self.source.input_pair[1]:
            raise ValueError("source input modes must be distinct")
        if self.detection.efficiencies is not None and len(self.detection.efficiencies) != n:
            raise ValueError(f"detection lists {len(self.detection.efficiencies)} efficiencies for {n} modes")
        if isinstance(self.task, EnsembleTask) and self.disorder is None:
            raise ValueError("the ensemble task needs a disorder section")
        return self

    @property
    def task_kind(self) -> TaskKind:
        return TaskKind(self.task.kind)

    @property
    def n_modes(self) -> int:
        return self.lattice.geometry.n_sites

    @property
    def fig5_compatible(self) -> bool:
        return self.output.fig5_compatible or getattr(self.task, "fig5_compatible", False)

    def with_fig5_compatible(self) -> "ExperimentConfig":
        return self.model_copy(update={"output": self.output.model_copy(update={"fig5_compatible": True})})


def load_experiment_config(text: str) -> ExperimentConfig:
    """Validate a JSON experiment document; every rejection is reported as a schema error."""
    try:
        return ExperimentConfig.model_validate_json(text)
    except ValidationError as e:
        details = "; ".join(f"{'.'.join(map(str, err['loc']))}: {err['msg']}" for err in e.errors())
        raise ConfigSchemaException(f"Invalid experiment config: {details}")
    except SimulationException as e:
        raise ConfigSchemaException(f"Invalid experiment config ({e.error_code}): {e}")


def load_experiment_file(path: Union[str, Path]) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise OutputIOException(f"Cannot read config {path}: {e}", failed_step="config_read")
    try:
        json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigSchemaException(f"Config {path} is not valid JSON: {e}")
    return load_experiment_config(text)


class TaskResult(DomainModel):
    task: TaskKind
    summary: str
    files: List[str] = Field(default_factory=list)
    metrics: Dict[str, Any] = Field(default_factory=dict)


class TaskFailure(DomainModel):
    error_code: str
    error_message: str
    failed_step: str
    exit_code: int
    task: Optional[TaskKind] = None
    stack_trace: Optional[str] = None
    timestamp: str = Field(default_factory=lambda: datetime.now(timezone.utc).isoformat())

    @classmethod
    def from_exception(cls, e: SimulationException, task: Optional[TaskKind] = None, stack_trace: Optional[str] = None) -> "TaskFailure":
        return cls(
            error_code=e.error_code,
            error_message=str(e),
            failed_step=e.failed_step,
            exit_code=e.exit_code,
            task=task,
            stack_trace=stack_trace,
        )


def summary_statistics(values: List[float]) -> Dict[str, float]:
    arr = np.asarray(values, dtype=float)
    return {
        "mean": float(np.mean(arr)),
        "median": float(np.median(arr)),
        "std": float(np.std(arr)),
        "min": float(np.min(arr)),
        "max": float(np.max(arr)),
    }

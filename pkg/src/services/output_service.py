import json
import logging
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, TypeAdapter, ValidationError

from ..exceptions.simulation_exceptions import OutputIOException, ValidationException
from ..simulation.correlation import SinglesDistribution
from ..simulation.counting import CountRecord
from ..simulation.tomography import DipCurve, VisibilityRecord

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"

PathLike = Union[str, Path]

_COUNT_RECORD = TypeAdapter(CountRecord)
_SINGLES = TypeAdapter(List[SinglesDistribution])
_VISIBILITIES = TypeAdapter(List[VisibilityRecord])
_DIP_CURVES = TypeAdapter(List[DipCurve])


class OutputServiceInterface(ABC):
    @abstractmethod
    def write_rows(self, name: str, header: Sequence[str], rows: Any, formats: Sequence[str]) -> str:
        pass

    @abstractmethod
    def write_json(self, name: str, payload: Union[BaseModel, Dict[str, Any]]) -> str:
        pass

    @abstractmethod
    def write_pair_matrix(self, name: str, values: np.ndarray, upper_only: bool = True) -> str:
        pass

    @abstractmethod
    def write_complex_matrix(self, name: str, values: np.ndarray) -> str:
        pass

    @abstractmethod
    def write_vector(self, name: str, values: np.ndarray) -> str:
        pass

    @abstractmethod
    def write_counts(self, name: str, record: CountRecord) -> str:
        pass

    @abstractmethod
    def write_singles(self, name: str, singles: Sequence[SinglesDistribution]) -> str:
        pass

    @abstractmethod
    def write_visibilities(self, name: str, records: Sequence[VisibilityRecord]) -> str:
        pass


class OutputService(OutputServiceInterface):
    """Writes task outputs under one directory: CSV with a header row, 1-based indices, %.17g floats."""

    def __init__(self, out_dir: PathLike):
        self.out_dir = Path(out_dir)
        self.written: List[str] = []

    def _target(self, name: str) -> Path:
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            logger.error(f"Cannot create output directory {self.out_dir}: {e}")
            raise OutputIOException(f"Cannot create output directory {self.out_dir}: {e}")
        return self.out_dir / name

    def write_rows(self, name: str, header: Sequence[str], rows: Any, formats: Sequence[str]) -> str:
        path = self._target(name)
        data = np.array(rows, dtype=object).reshape(-1, len(header))
        try:
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                np.savetxt(fh, data, fmt=list(formats), delimiter=",", header=",".join(header), comments="")
        except OSError as e:
            logger.error(f"Error writing {path}: {e}")
            raise OutputIOException(f"Failed to write {path}: {e}")
        self.written.append(name)
        logger.debug(f"Wrote {data.shape[0]} rows to {path}")
        return name

    def write_json(self, name: str, payload: Union[BaseModel, Dict[str, Any]]) -> str:
        path = self._target(name)
        if isinstance(payload, BaseModel):
            text = payload.model_dump_json(by_alias=True, indent=2)
        else:
            text = json.dumps(payload, indent=2, sort_keys=True)
        try:
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text + "\n")
        except OSError as e:
            logger.error(f"Error writing {path}: {e}")
            raise OutputIOException(f"Failed to write {path}: {e}")
        self.written.append(name)
        return name

    def write_pair_matrix(self, name: str, values: np.ndarray, upper_only: bool = True) -> str:
        """Matrix as (i, j, value) rows; symmetric matrices keep only i <= j."""
        n = values.shape[0]
        rows, cols = np.triu_indices(n) if upper_only else np.indices((n, n)).reshape(2, -1)
        table = np.column_stack([rows + 1, cols + 1, values[rows, cols]])
        return self.write_rows(name, ["i", "j", "value"], table, ["%d", "%d", FLOAT_FORMAT])

    def write_complex_matrix(self, name: str, values: np.ndarray) -> str:
        n = values.shape[0]
        rows, cols = np.indices((n, n)).reshape(2, -1)
        entries = values[rows, cols]
        table = np.column_stack([rows + 1, cols + 1, entries.real, entries.imag])
        return self.write_rows(name, ["i", "j", "real", "imag"], table, ["%d", "%d", FLOAT_FORMAT, FLOAT_FORMAT])

    def write_vector(self, name: str, values: np.ndarray) -> str:
        table = np.column_stack([np.arange(1, values.size + 1), values])
        return self.write_rows(name, ["i", "value"], table, ["%d", FLOAT_FORMAT])

    def write_counts(self, name: str, record: CountRecord) -> str:
        return self.write_rows(name, ["i", "j", "count"], record.to_rows(), ["%d", "%d", "%d"])

    def write_singles(self, name: str, singles: Sequence[SinglesDistribution]) -> str:
        table = [
            (s.input_mode, i + 1, p) for s in singles for i, p in enumerate(s.probabilities)
        ]
        return self.write_rows(name, ["input", "i", "value"], table, ["%d", "%d", FLOAT_FORMAT])

    def write_visibilities(self, name: str, records: Sequence[VisibilityRecord]) -> str:
        table = [
            (
                r.scan_id if r.scan_id is not None else index + 1,
                *r.input_pair,
                *r.output_pair,
                r.visibility,
                np.nan if r.uncertainty is None else r.uncertainty,
            )
            for index, r in enumerate(records)
        ]
        header = ["scan", "input_i", "input_j", "output_k", "output_l", "visibility", "uncertainty"]
        return self.write_rows(name, header, table, ["%d"] * 5 + [FLOAT_FORMAT] * 2)


def _read_table(path: PathLike, header: Sequence[str]) -> np.ndarray:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            found = fh.readline().strip().split(",")
            if found != list(header):
                raise ValidationException(f"{path} has header {found}, expected {list(header)}")
            return np.loadtxt(fh, delimiter=",", ndmin=2).reshape(-1, len(header))
    except OSError as e:
        raise OutputIOException(f"Failed to read {path}: {e}", failed_step="ingestion")
    except ValueError as e:
        raise ValidationException(f"Malformed table {path}: {e}", failed_step="ingestion")


def _is_json(path: PathLike) -> bool:
    return Path(path).suffix.lower() == ".json"


def _read_models(path: PathLike, adapter: TypeAdapter) -> Any:
    payload = read_json(path)
    try:
        return adapter.validate_python(payload)
    except ValidationError as e:
        details = "; ".join(f"{'.'.join(map(str, err['loc']))}: {err['msg']}" for err in e.errors()[:5])
        raise ValidationException(f"Malformed {path}: {details}", failed_step="ingestion")


def read_counts(path: PathLike, n_modes: int, **metadata) -> CountRecord:
    """
    Measured coincidences for an n_modes device.

    Args:
        path: CSV with (i, j, count) rows, or a JSON CountRecord such as counts.json.
        n_modes: Number of output modes the record must cover.
        **metadata: CountRecord fields for CSV input; `total_pairs_emitted` defaults to
            the number of recorded coincidences.

    Returns:
        The validated record.

    Raises:
        OutputIOException: If the file cannot be read.
        ValidationException: If the content is malformed or covers another mode count.
    """
    if _is_json(path):
        record = _read_models(path, _COUNT_RECORD)
    else:
        table = _read_table(path, ["i", "j", "count"]).astype(int)
        metadata.setdefault("total_pairs_emitted", max(int(table[:, 2].sum()), 1))
        try:
            record = CountRecord.from_rows(table.tolist(), n_modes=n_modes, **metadata)
        except ValidationError as e:
            raise ValidationException(f"Malformed counts {path}: {e.errors()[0]['msg']}", failed_step="ingestion")
    if record.n_modes != n_modes:
        raise ValidationException(f"{path} holds counts for {record.n_modes} modes, expected {n_modes}", failed_step="ingestion")
    return record


def read_singles(path: PathLike) -> List[SinglesDistribution]:
    """CSV rows (input, i, value), or a JSON list of {inputMode, probabilities} objects."""
    if _is_json(path):
        return _read_models(path, _SINGLES)
    table = _read_table(path, ["input", "i", "value"])
    singles = []
    for mode in dict.fromkeys(table[:, 0].astype(int)):
        rows = table[table[:, 0] == mode]
        probabilities = rows[np.argsort(rows[:, 1]), 2]
        singles.append(SinglesDistribution(input_mode=int(mode), probabilities=probabilities))
    return singles


def read_visibilities(path: PathLike) -> List[VisibilityRecord]:
    """CSV as written by write_visibilities, or a JSON list of VisibilityRecord objects."""
    if _is_json(path):
        return _read_models(path, _VISIBILITIES)
    header = ["scan", "input_i", "input_j", "output_k", "output_l", "visibility", "uncertainty"]
    records = []
    for row in _read_table(path, header):
        scan, i, j, k, l = (int(v) for v in row[:5])
        records.append(
            VisibilityRecord(
                input_pair=(i, j),
                output_pair=(k, l),
                visibility=float(row[5]),
                uncertainty=None if np.isnan(row[6]) else float(row[6]),
                scan_id=scan,
            )
        )
    return records


def read_dip_curves(path: PathLike) -> List[DipCurve]:
    """JSON list of {inputPair, outputPair, delays, coincidences} delay scans."""
    return _read_models(path, _DIP_CURVES)


def read_json(path: PathLike) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise OutputIOException(f"Failed to read {path}: {e}", failed_step="ingestion")
    except ValueError as e:
        raise ValidationException(f"Malformed JSON in {path}: {e}", failed_step="ingestion")


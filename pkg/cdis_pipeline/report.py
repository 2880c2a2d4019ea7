import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

from cdis_volume.errors import CorruptFileError, ValidationError, VolumeIOError

logger = logging.getLogger(__name__)

CSV_HEADER = ("modality", "auc", "note")
BEST_NOTE = "best"
INVERTED_NOTE = "inverted contrast (tumour scores lower)"


@dataclass(frozen=True)
class ModalityRow:
    modality: str
    auc: float
    note: str = ""

    def __post_init__(self):
        if not (math.isfinite(self.auc) and 0.0 <= self.auc <= 1.0):
            raise ValidationError(f"AUC for modality '{self.modality}' must lie in [0, 1], got {self.auc}")


@dataclass(frozen=True)
class ComparisonReport:
    rows: tuple[ModalityRow, ...]
    notes: tuple[str, ...] = ()
    metadata: dict = field(default_factory=dict)

    @property
    def best(self) -> ModalityRow | None:
        """Row with the highest AUC; the first one on ties."""
        if not self.rows:
            return None
        return max(self.rows, key=lambda row: row.auc)

    def auc_of(self, modality: str) -> float:
        for row in self.rows:
            if row.modality == modality:
                return row.auc
        raise ValidationError(f"Modality '{modality}' not in report; available: {[r.modality for r in self.rows]}")

    def to_csv(self, filepath) -> None:
        try:
            with open(filepath, "w", encoding="utf-8", newline="") as f:
                writer = csv.writer(f, lineterminator="\n")
                writer.writerow(CSV_HEADER)
                for row in self.rows:
                    writer.writerow([row.modality, repr(row.auc), row.note])
        except OSError as e:
            raise VolumeIOError(f"Could not write report '{filepath}': {e}")

    @classmethod
    def from_csv(cls, filepath) -> "ComparisonReport":
        """Reads the rows written by to_csv; notes and metadata live only in the JSON form."""
        try:
            with open(filepath, "r", encoding="utf-8", newline="") as f:
                records = list(csv.reader(f))
        except OSError as e:
            raise VolumeIOError(f"Could not read report '{filepath}': {e}")
        if not records or tuple(records[0]) != CSV_HEADER:
            raise CorruptFileError(f"Report '{filepath}' lacks the header {','.join(CSV_HEADER)}")
        rows = []
        for record in records[1:]:
            if len(record) != len(CSV_HEADER):
                raise CorruptFileError(f"Malformed report row in '{filepath}': {record}")
            try:
                rows.append(ModalityRow(record[0], float(record[1]), record[2]))
            except ValueError as e:
                raise CorruptFileError(f"Malformed report row in '{filepath}': {e}")
        return cls(tuple(rows))

    def to_dict(self) -> dict:
        return {
            "rows": [asdict(row) for row in self.rows],
            "best": self.best.modality if self.best else None,
            "notes": list(self.notes),
            "metadata": self.metadata,
        }

    def to_json(self, filepath) -> None:
        try:
            with open(filepath, "w", encoding="utf-8") as f:
                f.write(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        except OSError as e:
            raise VolumeIOError(f"Could not write report '{filepath}': {e}")

    def format_table(self) -> str:
        width = max([len("modality")] + [len(row.modality) for row in self.rows])
        lines = [f"{'modality':<{width}}  auc     note"]
        lines.extend(f"{row.modality:<{width}}  {row.auc:.4f}  {row.note}".rstrip() for row in self.rows)
        lines.extend(f"note: {note}" for note in self.notes)
        return "\n".join(lines)


@dataclass
class RunManifest:
    """Provenance of an optimize run: configs, digests, cases and outcome."""

    initial_config: dict
    initial_digest: str
    optimized_config: dict
    optimized_digest: str
    nm_config: dict
    nm_digest: str
    case_ids: list[str]
    seeds: list
    aggregation: str
    r2_min: float
    termination: str
    n_iterations: int
    n_evals: int
    initial_auc: float
    optimized_auc: float
    skipped: list[dict] = field(default_factory=list)
    holdout: dict | None = None

    def write(self, filepath) -> None:
        path = Path(filepath)
        try:
            path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        except OSError as e:
            raise VolumeIOError(f"Could not write run manifest '{path}': {e}")
        logger.info("Run manifest written to %s", path)

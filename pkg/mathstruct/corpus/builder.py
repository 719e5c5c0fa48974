from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from pydantic import BaseModel, Field

from ..errors import ArtifactIOError
from ..isolation.fault_boundary import FaultBoundary
from ..observability.metrics_exporter import MetricsExporter
from ..observability.telemetry_collector import TelemetryCollector
from .dataset import write_dataset
from .extraction import DEFAULT_MIN_CONTEXT_CHARS, ExtractionResult, extract_pairs


class FileFailure(BaseModel):
    path: str
    reason: str


class DatasetSummary(BaseModel):
    files_read: int = 0
    files_failed: List[FileFailure] = Field(default_factory=list)
    equations_seen: int = 0
    pairs_written: int = 0
    formulas_skipped: int = 0
    contexts_skipped: int = 0
    per_file: Dict[str, int] = Field(default_factory=dict)


def read_topics(path: Union[str, Path]) -> Dict[str, str]:
    """Metadata lines `<file name> <topic>`; the topic may contain spaces."""
    topics: Dict[str, str] = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                name, _, topic = line.partition(" ")
                topics[name] = topic.strip()
    except OSError as e:
        raise ArtifactIOError(str(path), e.strerror or str(e)) from e
    return topics


def _read_source(path: Path) -> str:
    try:
        with open(path, "r", encoding="utf-8", errors="replace") as fh:
            return fh.read()
    except OSError as e:
        raise ArtifactIOError(str(path), e.strerror or str(e)) from e


def build_dataset(input_paths: Sequence[Union[str, Path]], out: Union[str, Path],
                  min_context_chars: int = DEFAULT_MIN_CONTEXT_CHARS,
                  threads: int = 1, topics: Optional[Dict[str, str]] = None,
                  metrics: Optional[MetricsExporter] = None) -> DatasetSummary:
    """
    Extract pairs from every file and write them as JSON lines in file order.

    Unreadable files are reported in the summary, not raised.
    """
    telemetry = TelemetryCollector("corpus")
    metrics = metrics or MetricsExporter()
    topics = topics or {}
    paths = [Path(p) for p in input_paths]

    def work(path: Path) -> ExtractionResult:
        text = _read_source(path)
        topic = topics.get(path.name, topics.get(path.stem))
        return extract_pairs(text, min_context_chars, source_id=path.name, topic=topic)

    outcomes = FaultBoundary(threads).map(work, paths)

    summary = DatasetSummary()
    pairs = []
    for path, outcome in zip(paths, outcomes):
        if not outcome["success"]:
            error = outcome["error"]
            reason = error.reason if isinstance(error, ArtifactIOError) else str(error)
            summary.files_failed.append(FileFailure(path=str(path), reason=reason))
            metrics.record_file_error()
            telemetry.warn("file_failed", {"path": str(path), "reason": reason})
            continue
        result: ExtractionResult = outcome["result"]
        summary.files_read += 1
        summary.equations_seen += result.equations
        summary.formulas_skipped += result.skipped_unparsed
        summary.contexts_skipped += result.skipped_context
        summary.per_file[str(path)] = len(result.pairs)
        pairs.extend(result.pairs)
        metrics.record_skip("unparsed", result.skipped_unparsed)
        metrics.record_skip("short_context", result.skipped_context)
        telemetry.collect("file_ingested", {
            "path": str(path), "pairs": len(result.pairs),
            "skipped": result.skipped_unparsed + result.skipped_context,
        })

    summary.pairs_written = write_dataset(pairs, out)
    metrics.record_pairs(summary.pairs_written)
    telemetry.collect("dataset_written", {"out": str(out), "pairs": summary.pairs_written})
    return summary

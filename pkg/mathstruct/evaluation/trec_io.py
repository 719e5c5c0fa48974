"""
Text formats for evaluation artifacts.

    qrels       query_id 0 doc_id rating          (whitespace separated)
    run         query_id doc_id rank score
    embeddings  JSON lines {"id": ..., "vector": [...]}
"""

import json
from collections import OrderedDict
from pathlib import Path
from typing import Dict, List, Sequence, Union

from pydantic import ValidationError

from ..errors import ArtifactIOError, DatasetFormatError
from .embedding import FormulaEmbedding
from .retrieval import QrelSet, RankedList

PathLike = Union[str, Path]


def _lines(path: PathLike):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for number, line in enumerate(fh, start=1):
                if line.strip() and not line.lstrip().startswith("#"):
                    yield number, line
    except OSError as e:
        raise ArtifactIOError(str(path), e.strerror or str(e)) from e


def read_qrels(path: PathLike) -> QrelSet:
    judgments: Dict[str, Dict[str, int]] = {}
    for number, line in _lines(path):
        parts = line.split()
        if len(parts) != 4:
            raise DatasetFormatError(f"expected 4 fields, got {len(parts)}", number)
        query, _, doc, rating = parts
        try:
            judgments.setdefault(query, {})[doc] = int(rating)
        except ValueError as e:
            raise DatasetFormatError(f"rating {rating!r} is not an integer", number) from e
    try:
        return QrelSet(judgments=judgments)
    except ValidationError as e:
        raise DatasetFormatError(str(e.errors()[0]["msg"])) from e


def write_qrels(qrels: QrelSet, path: PathLike) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for query, docs in qrels.judgments.items():
                for doc, rating in docs.items():
                    fh.write(f"{query} 0 {doc} {rating}\n")
    except OSError as e:
        raise ArtifactIOError(str(path), e.strerror or str(e)) from e


def read_run(path: PathLike) -> List[RankedList]:
    """Runs in file order of first appearance; entries re-sorted by rank."""
    rows: "OrderedDict[str, list]" = OrderedDict()
    for number, line in _lines(path):
        parts = line.split()
        if len(parts) != 4:
            raise DatasetFormatError(f"expected 4 fields, got {len(parts)}", number)
        query, doc, rank, score = parts
        try:
            rows.setdefault(query, []).append((int(rank), doc, float(score)))
        except ValueError as e:
            raise DatasetFormatError(f"bad rank or score: {e}", number) from e
    runs = []
    for query, entries in rows.items():
        entries.sort()
        try:
            runs.append(RankedList(query_id=query, entries=[(d, s) for _, d, s in entries]))
        except ValidationError as e:
            raise DatasetFormatError(f"query {query}: {e.errors()[0]['msg']}") from e
    return runs


def write_run(runs: Sequence[RankedList], path: PathLike) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for run in runs:
                for rank, (doc, score) in enumerate(run.entries, start=1):
                    fh.write(f"{run.query_id} {doc} {rank} {score!r}\n")
    except OSError as e:
        raise ArtifactIOError(str(path), e.strerror or str(e)) from e


def write_embeddings(embeddings: Sequence[FormulaEmbedding], path: PathLike) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for e in embeddings:
                fh.write(e.model_dump_json() + "\n")
    except OSError as e:
        raise ArtifactIOError(str(path), e.strerror or str(e)) from e


def read_embeddings(path: PathLike) -> List[FormulaEmbedding]:
    out = []
    for number, line in _lines(path):
        try:
            out.append(FormulaEmbedding(**json.loads(line)))
        except (json.JSONDecodeError, ValidationError, TypeError) as e:
            raise DatasetFormatError(f"bad embedding record: {e}", number) from e
    return out

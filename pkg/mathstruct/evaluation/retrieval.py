"""
Cosine reranking and bpref scoring with graded judgments.

Ratings run 0..4 (sum of two assessors). A document is relevant at
threshold t when its rating is >= t: partial relevance uses t=1, full
relevance t=3. Unjudged documents in a run are ignored.
"""

from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator

from ..errors import NoRelevant, ZeroVector
from ..observability.telemetry_collector import TelemetryCollector
from .embedding import FormulaEmbedding

PARTIAL_THRESHOLD = 1
FULL_THRESHOLD = 3
MAX_RATING = 4
DEFAULT_DEPTH = 1000


class RankedList(BaseModel):
    query_id: str
    entries: List[Tuple[str, float]] = Field(default_factory=list)

    @field_validator("entries")
    @classmethod
    def validate_entries(cls, v):
        ids = [doc for doc, _ in v]
        if len(set(ids)) != len(ids):
            raise ValueError("document ids must be unique within a ranked list")
        for (_, a), (_, b) in zip(v, v[1:]):
            if b > a:
                raise ValueError("scores must be non-increasing")
        return v

    @property
    def doc_ids(self) -> List[str]:
        return [doc for doc, _ in self.entries]


class QrelSet(BaseModel):
    judgments: Dict[str, Dict[str, int]] = Field(default_factory=dict)

    @field_validator("judgments")
    @classmethod
    def validate_ratings(cls, v):
        for query, docs in v.items():
            for doc, rating in docs.items():
                if not 0 <= rating <= MAX_RATING:
                    raise ValueError(f"rating {rating} for {query}/{doc} outside 0..{MAX_RATING}")
        return v

    def for_query(self, query_id: str) -> Dict[str, int]:
        return self.judgments.get(query_id, {})


class RetrievalReport(BaseModel):
    partial: float
    full: float
    h_mean: float
    queries_partial: int
    queries_full: int
    skipped_partial: List[str] = Field(default_factory=list)
    skipped_full: List[str] = Field(default_factory=list)
    per_query: Dict[str, Dict[str, Optional[float]]] = Field(default_factory=dict)


def rerank(query: FormulaEmbedding, candidates: Sequence[FormulaEmbedding],
           first_stage: Optional[Sequence[str]] = None, depth: int = DEFAULT_DEPTH) -> RankedList:
    """
    Order candidates by cosine to the query, ties by document id.

    With first_stage, only the first `depth` ids of that list are reordered.
    """
    pool = list(candidates)
    if first_stage is not None:
        allowed = set(first_stage[:depth])
        pool = [c for c in pool if c.id in allowed]
    if not pool:
        return RankedList(query_id=query.id)
    q = query.array()
    matrix = np.stack([c.array() for c in pool])
    norms = np.linalg.norm(matrix, axis=1)
    q_norm = np.linalg.norm(q)
    if q_norm == 0.0 or (norms == 0.0).any():
        raise ZeroVector("cannot rank with a zero embedding")
    scores = np.clip(matrix @ q / (norms * q_norm), -1.0, 1.0)
    ids = [c.id for c in pool]
    order = sorted(range(len(pool)), key=lambda k: (-scores[k], ids[k]))[:depth]
    return RankedList(query_id=query.id, entries=[(ids[k], float(scores[k])) for k in order])


def bpref(run: RankedList, qrels: QrelSet, relevance_threshold: int) -> float:
    """
    (1/R) * sum over retrieved relevant r of
        1 - min(#judged non-relevant above r, R) / min(R, N)
    """
    judged = qrels.for_query(run.query_id)
    relevant = {d for d, r in judged.items() if r >= relevance_threshold}
    nonrelevant = {d for d, r in judged.items() if r < relevance_threshold}
    big_r, big_n = len(relevant), len(nonrelevant)
    if big_r == 0:
        raise NoRelevant(f"query {run.query_id} has no document rated >= {relevance_threshold}")
    denom = min(big_r, big_n)
    total = 0.0
    nonrel_seen = 0
    for doc in run.doc_ids:
        if doc in relevant:
            total += 1.0 if denom == 0 else 1.0 - min(nonrel_seen, big_r) / denom
        elif doc in nonrelevant:
            nonrel_seen += 1
    return total / big_r


def harmonic_mean(p: float, f: float) -> float:
    return 0.0 if p + f == 0 else 2 * p * f / (p + f)


def eval_retrieval(runs: Sequence[RankedList], qrels: QrelSet) -> RetrievalReport:
    """Mean bpref at both thresholds; queries without relevant docs are skipped and listed."""
    telemetry = TelemetryCollector("eval")
    scores: Dict[int, List[float]] = {PARTIAL_THRESHOLD: [], FULL_THRESHOLD: []}
    skipped: Dict[int, List[str]] = {PARTIAL_THRESHOLD: [], FULL_THRESHOLD: []}
    per_query: Dict[str, Dict[str, Optional[float]]] = {}
    for run in runs:
        row: Dict[str, Optional[float]] = {}
        for threshold, name in ((PARTIAL_THRESHOLD, "partial"), (FULL_THRESHOLD, "full")):
            try:
                value = bpref(run, qrels, threshold)
            except NoRelevant:
                skipped[threshold].append(run.query_id)
                row[name] = None
                continue
            scores[threshold].append(value)
            row[name] = value
        per_query[run.query_id] = row
    partial = float(np.mean(scores[PARTIAL_THRESHOLD])) if scores[PARTIAL_THRESHOLD] else 0.0
    full = float(np.mean(scores[FULL_THRESHOLD])) if scores[FULL_THRESHOLD] else 0.0
    report = RetrievalReport(
        partial=partial, full=full, h_mean=harmonic_mean(partial, full),
        queries_partial=len(scores[PARTIAL_THRESHOLD]), queries_full=len(scores[FULL_THRESHOLD]),
        skipped_partial=skipped[PARTIAL_THRESHOLD], skipped_full=skipped[FULL_THRESHOLD],
        per_query=per_query,
    )
    telemetry.collect("retrieval_evaluated", {
        "partial": report.partial, "full": report.full, "h_mean": report.h_mean,
        "skipped": len(report.skipped_partial) + len(report.skipped_full),
    })
    return report

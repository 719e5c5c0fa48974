"""
Formula embeddings from a trained encoder.

Default pooling (`mean2`) averages the token vectors of each of the last two
layers over every position except [PAD], [CLS] and [SEP], then averages the
two layer means. `cls2` averages the two layers' [CLS] vectors instead.
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, field_validator

from ..corpus.dataset import FormulaContextPair
from ..corpus.vocab import CLS_ID, PAD_ID, SEP_ID, Vocab
from ..errors import ZeroVector
from ..inputs.assembly import assemble
from ..inputs.types import Ablation
from ..isolation.fault_boundary import FaultBoundary
from ..nn.checkpoint import load_checkpoint
from ..nn.config import ModelConfig
from ..nn.encoder import forward
from ..nn.params import ParameterSet
from ..observability.telemetry_collector import TelemetryCollector
from ..parsing.parser import parse_to_opt
from ..parsing.tokens import tokenize_latex

POOLING = ("mean2", "cls2")


class FormulaEmbedding(BaseModel):
    id: str
    vector: List[float]

    @field_validator("vector")
    @classmethod
    def validate_vector(cls, v):
        if not all(math.isfinite(x) for x in v):
            raise ValueError("embedding has non-finite entries")
        return v

    def array(self) -> np.ndarray:
        return np.asarray(self.vector, dtype=np.float64)


@dataclass
class EncoderModel:
    params: ParameterSet
    cfg: ModelConfig
    vocab: Vocab

    @classmethod
    def from_files(cls, checkpoint: Union[str, Path], vocab: Union[str, Path]) -> "EncoderModel":
        params, cfg = load_checkpoint(str(checkpoint))
        return cls(params, cfg, Vocab.load(vocab))


def _pool(hidden_states: List[np.ndarray], ids: np.ndarray, pool: str) -> np.ndarray:
    last_two = hidden_states[-2:]
    if pool == "cls2":
        return np.mean([h[0, 0] for h in last_two], axis=0)
    if pool != "mean2":
        raise ValueError(f"unknown pooling {pool!r}, expected one of {POOLING}")
    keep = (ids != PAD_ID) & (ids != CLS_ID) & (ids != SEP_ID)
    if not keep.any():
        keep = ids != PAD_ID
    return np.mean([h[0, keep].mean(axis=0) for h in last_two], axis=0)


def embed(formula_latex: str, model: EncoderModel, ablation: Union[Ablation, str] = Ablation.FULL,
          context_tokens: Optional[Sequence[str]] = None, formula_id: str = "",
          pool: str = "mean2") -> FormulaEmbedding:
    """
    Embed one formula. Without a context the input is always the formula_only
    layout `[CLS] T [SEP]`; `ablation` picks the layout only when a context is given.
    The formula must still parse.
    """
    tokens = tokenize_latex(formula_latex)
    opt = parse_to_opt(tokens)
    ablation = Ablation(ablation) if context_tokens else Ablation.FORMULA_ONLY
    pair = FormulaContextPair(formula_latex, tokens, list(context_tokens or []), opt)
    x = assemble(pair, model.vocab, model.cfg.max_len, ablation)
    trace = forward(x, model.params, model.cfg)
    vector = _pool(trace.hidden_states, trace.batch.ids[0], pool)
    return FormulaEmbedding(id=formula_id, vector=vector.tolist())


def embed_many(formulas: Sequence[Tuple[str, ...]], model: EncoderModel,
               ablation: Union[Ablation, str] = Ablation.FULL, pool: str = "mean2",
               threads: int = 1) -> Tuple[List[FormulaEmbedding], List[Tuple[str, str]]]:
    """
    Embed (id, latex) or (id, latex, context_tokens) items in input order.
    Formulas that fail (parse errors, too long) are returned as (id, reason)
    instead of aborting the batch.
    """
    telemetry = TelemetryCollector("embed")
    outcomes = FaultBoundary(threads).map(
        lambda item: embed(item[1], model, ablation, item[2] if len(item) > 2 else None,
                           formula_id=item[0], pool=pool),
        formulas,
    )
    done, failed = [], []
    for item, outcome in zip(formulas, outcomes):
        fid = item[0]
        if outcome["success"]:
            done.append(outcome["result"])
        else:
            failed.append((fid, str(outcome["error"])))
    telemetry.collect("formulas_embedded", {"embedded": len(done), "failed": len(failed)})
    return done, failed


def _vector(x: Union[FormulaEmbedding, np.ndarray, Sequence[float]]) -> np.ndarray:
    if isinstance(x, FormulaEmbedding):
        return x.array()
    return np.asarray(x, dtype=np.float64)


def cosine(a, b) -> float:
    va, vb = _vector(a), _vector(b)
    if va.shape != vb.shape:
        raise ValueError(f"dimension mismatch: {va.shape} vs {vb.shape}")
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine of a zero vector is undefined")
    return float(np.clip(va @ vb / (na * nb), -1.0, 1.0))

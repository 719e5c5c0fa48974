"""
Input assembly.

Layout `[CLS] T [SEP] C [SEP] N` with segments 0 / 1 / 2. The ablations drop
C, N or both. Over-long inputs lose context tail first, then formula tail
(one formula token always stays), and only then the tree, cut to a
pre-order prefix. Formula and context positions run on one counter; node
positions restart at 0.
"""

from typing import List, Sequence, Union

import numpy as np

from ..corpus.dataset import FormulaContextPair
from ..corpus.vocab import CLS_ID, PAD_ID, SEP_ID, Vocab
from ..errors import TooLong
from .mask import mask_from_layout
from .types import (
    SEGMENT_CONTEXT, SEGMENT_FORMULA, SEGMENT_NODES, Ablation, Batch, ModelInput,
)

MIN_MAX_LEN = 8


def assemble(pair: FormulaContextPair, vocab: Vocab, max_len: int,
             ablation: Union[Ablation, str] = Ablation.FULL) -> ModelInput:
    ablation = Ablation(ablation)
    if max_len < MIN_MAX_LEN:
        raise ValueError(f"max_len must be at least {MIN_MAX_LEN}")
    formula = [vocab.encode(t.text) for t in pair.formula_tokens]
    if len(formula) + 2 > max_len:
        raise TooLong(f"formula of {len(formula)} tokens does not fit max_len={max_len}")
    context = [vocab.encode(w) for w in pair.context_tokens] if ablation.uses_context else []
    tree = pair.opt if ablation.uses_opt else None
    n_nodes = len(tree) if tree is not None else 0
    specials = 3 if ablation.uses_context else 2

    over = specials + len(formula) + len(context) + n_nodes - max_len
    if over > 0:
        cut = min(over, len(context))
        context = context[:len(context) - cut]
        over -= cut
    if over > 0:
        cut = min(over, len(formula) - 1)
        formula = formula[:len(formula) - cut]
        over -= cut
    if over > 0:
        n_nodes -= over
        tree = tree.prefix(n_nodes)

    ids: List[int] = [CLS_ID] + formula + [SEP_ID]
    segments: List[int] = [SEGMENT_FORMULA] * len(ids)
    if ablation.uses_context:
        ids += context + [SEP_ID]
        segments += [SEGMENT_CONTEXT] * (len(context) + 1)
    positions = list(range(len(ids)))
    node_start = len(ids)
    if tree is not None:
        ids += [vocab.encode(label) for label in tree.labels]
        segments += [SEGMENT_NODES] * n_nodes
        positions += list(range(n_nodes))
    node_span = range(node_start, node_start + n_nodes)

    ids_arr = np.asarray(ids, dtype=np.int64)
    return ModelInput(
        ids=ids_arr,
        segments=np.asarray(segments, dtype=np.int64),
        positions=np.asarray(positions, dtype=np.int64),
        mask=mask_from_layout(ids_arr, node_span, tree),
        node_span=node_span,
        tree=tree,
        ablation=ablation,
    )


def collate(inputs: Sequence[ModelInput]) -> Batch:
    """Pad to the longest input; padded mask rows and columns stay closed."""
    if not inputs:
        raise ValueError("cannot collate an empty batch")
    size = len(inputs)
    length = max(len(x) for x in inputs)
    ids = np.full((size, length), PAD_ID, dtype=np.int64)
    segments = np.zeros((size, length), dtype=np.int64)
    positions = np.zeros((size, length), dtype=np.int64)
    mask = np.zeros((size, length, length), dtype=bool)
    lengths = np.zeros(size, dtype=np.int64)
    mlm_index, mlm_targets = [], []
    ccp_index, ccp_targets = [], []
    msp_index, msp_targets = [], []
    cls_index, cls_targets = [], []
    for b, x in enumerate(inputs):
        n = len(x)
        ids[b, :n] = x.ids
        segments[b, :n] = x.segments
        positions[b, :n] = x.positions
        mask[b, :n, :n] = x.mask.m
        lengths[b] = n
        for pos, original in x.mlm_labels:
            mlm_index.append((b, pos))
            mlm_targets.append(original)
        if x.ccp_label is not None:
            ccp_index.append(b)
            ccp_targets.append(x.ccp_label)
        for i, j, delta in x.msp_labels:
            msp_index.append((b, i, j))
            msp_targets.append(delta)
        if x.cls_label is not None:
            cls_index.append(b)
            cls_targets.append(x.cls_label)
    return Batch(
        ids=ids, segments=segments, positions=positions, mask=mask, lengths=lengths,
        mlm_index=np.asarray(mlm_index, dtype=np.int64).reshape(-1, 2),
        mlm_targets=np.asarray(mlm_targets, dtype=np.int64),
        ccp_index=np.asarray(ccp_index, dtype=np.int64),
        ccp_targets=np.asarray(ccp_targets, dtype=np.float64),
        msp_index=np.asarray(msp_index, dtype=np.int64).reshape(-1, 3),
        msp_targets=np.asarray(msp_targets, dtype=np.float64),
        cls_index=np.asarray(cls_index, dtype=np.int64),
        cls_targets=np.asarray(cls_targets, dtype=np.int64),
        inputs=list(inputs),
    )

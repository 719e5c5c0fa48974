"""
Task sampling for pre-training: token masking (MLM), context swapping (CCP)
and tree-edge cutting (MSP). Every function takes an explicit numpy Generator
and returns new objects; inputs are never modified in place.
"""

import dataclasses
import math
from typing import Optional, Sequence, Tuple

import numpy as np

from ..corpus.dataset import FormulaContextPair
from ..corpus.vocab import MASK_ID, SPECIALS
from ..errors import PoolTooSmall
from ..parsing.tree import OperatorTree
from .types import SEGMENT_CONTEXT, SEGMENT_FORMULA, ModelInput

MLM_RATE = 0.15
CCP_SWAP_RATE = 0.5
MSP_NODE_RATE = 0.15
FIRST_REGULAR_ID = len(SPECIALS)

# cut points of the per-position action draw: [MASK] / random id / keep
_MASK_P, _RANDOM_P = 0.8, 0.9


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent stream for (seed, keys...), e.g. (global_seed, pair_index)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *(int(k) for k in keys)]))


def sample_count(rate: float, population: int) -> int:
    if population <= 0 or rate <= 0:
        return 0
    # guard against 0.15 * 20 landing a hair above 3
    return min(population, math.ceil(rate * population - 1e-9))


def maskable_positions(input: ModelInput) -> np.ndarray:
    seg = input.segments
    return np.flatnonzero(
        ((seg == SEGMENT_FORMULA) | (seg == SEGMENT_CONTEXT)) & (input.ids >= FIRST_REGULAR_ID)
    )


def sample_mlm(input: ModelInput, rng: np.random.Generator, vocab_size: int,
               mask_rate: float = MLM_RATE) -> ModelInput:
    candidates = maskable_positions(input)
    k = sample_count(mask_rate, len(candidates))
    if k == 0:
        return dataclasses.replace(input, mlm_labels=[])
    chosen = np.sort(rng.choice(candidates, size=k, replace=False))
    ids = input.ids.copy()
    labels = []
    for pos in chosen:
        pos = int(pos)
        labels.append((pos, int(ids[pos])))
        roll = rng.random()
        if roll < _MASK_P:
            ids[pos] = MASK_ID
        elif roll < _RANDOM_P:
            if vocab_size > FIRST_REGULAR_ID:
                ids[pos] = rng.integers(FIRST_REGULAR_ID, vocab_size)
        # else: unchanged
    return dataclasses.replace(input, ids=ids, mlm_labels=labels)


def sample_ccp(pair: FormulaContextPair, pool: Sequence[FormulaContextPair],
               rng: np.random.Generator, swap_rate: float = CCP_SWAP_RATE,
               self_index: Optional[int] = None) -> Tuple[FormulaContextPair, int]:
    """
    Replace the context with another pair's context with probability swap_rate.

    Returns the (possibly new) pair and the correspondence bit: 1 when the
    context is still the formula's own.
    """
    if len(pool) < 2:
        raise PoolTooSmall(f"context swapping needs at least 2 pairs, got {len(pool)}")
    if self_index is None:
        self_index = next((i for i, p in enumerate(pool) if p is pair), -1)
    if rng.random() >= swap_rate:
        return pair, 1
    if self_index < 0:
        other = int(rng.integers(0, len(pool)))
    else:
        other = int(rng.integers(0, len(pool) - 1))
        if other >= self_index:
            other += 1
    context = pool[other].context_tokens
    delta = 1 if list(context) == list(pair.context_tokens) else 0
    return pair.with_context(context), delta


def sample_msp(input: ModelInput, opt: OperatorTree, rng: np.random.Generator,
               node_rate: float = MSP_NODE_RATE, mask_node_id: bool = False) -> ModelInput:
    """
    Cut every tree connection of a sample of nodes and label node pairs.

    For each sampled node i and every other node j the label is 1 iff i and j
    share an edge in the uncut tree.
    """
    span = input.node_span
    n = len(span)
    k = sample_count(node_rate, n)
    if k == 0:
        return dataclasses.replace(input, msp_labels=[])
    sampled = np.sort(rng.choice(n, size=k, replace=False))
    mask = input.mask.copy()
    ids = input.ids.copy()
    labels = []
    base = span.start
    for i in sampled:
        i = int(i)
        for j in opt.neighbors(i):
            mask.m[base + i, base + j] = False
            mask.m[base + j, base + i] = False
        for j in range(n):
            if j != i:
                labels.append((base + i, base + j, int(opt.adjacent(i, j))))
        if mask_node_id:
            ids[base + i] = MASK_ID
    return dataclasses.replace(input, ids=ids, mask=mask, msp_labels=labels)

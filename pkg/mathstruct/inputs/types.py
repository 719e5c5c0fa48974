from dataclasses import dataclass, field
from enum import Enum
from typing import FrozenSet, List, Optional, Tuple

import numpy as np

from ..parsing.tree import OperatorTree
from .mask import MaskMatrix

SEGMENT_FORMULA, SEGMENT_CONTEXT, SEGMENT_NODES = 0, 1, 2


class Ablation(str, Enum):
    FULL = "full"
    NO_OPT = "no_opt"
    NO_CONTEXT = "no_context"
    FORMULA_ONLY = "formula_only"

    @property
    def uses_context(self) -> bool:
        return self in (Ablation.FULL, Ablation.NO_OPT)

    @property
    def uses_opt(self) -> bool:
        return self in (Ablation.FULL, Ablation.NO_CONTEXT)

    @property
    def pretrain_tasks(self) -> FrozenSet[str]:
        tasks = {"mlm"}
        if self.uses_context:
            tasks.add("ccp")
        if self.uses_opt:
            tasks.add("msp")
        return frozenset(tasks)


@dataclass
class ModelInput:
    ids: np.ndarray          # (L,) int64
    segments: np.ndarray     # (L,) int64, 0 formula / 1 context / 2 nodes
    positions: np.ndarray    # (L,) int64
    mask: MaskMatrix
    node_span: range
    tree: Optional[OperatorTree] = None  # tree behind the node span, after truncation
    ablation: Ablation = Ablation.FULL
    mlm_labels: List[Tuple[int, int]] = field(default_factory=list)
    ccp_label: Optional[int] = None
    msp_labels: List[Tuple[int, int, int]] = field(default_factory=list)
    cls_label: Optional[int] = None

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class Batch:
    """ModelInputs padded to the longest sequence, with labels as flat index arrays."""

    ids: np.ndarray          # (B, L)
    segments: np.ndarray     # (B, L)
    positions: np.ndarray    # (B, L)
    mask: np.ndarray         # (B, L, L) bool
    lengths: np.ndarray      # (B,)
    mlm_index: np.ndarray    # (K, 2) rows of (example, position)
    mlm_targets: np.ndarray  # (K,)
    ccp_index: np.ndarray    # (C,) example rows carrying a ccp label
    ccp_targets: np.ndarray  # (C,)
    msp_index: np.ndarray    # (P, 3) rows of (example, i, j)
    msp_targets: np.ndarray  # (P,)
    cls_index: np.ndarray    # (Q,)
    cls_targets: np.ndarray  # (Q,)
    inputs: List[ModelInput] = field(default_factory=list, repr=False)

    @property
    def size(self) -> int:
        return self.ids.shape[0]

    @property
    def seq_len(self) -> int:
        return self.ids.shape[1]

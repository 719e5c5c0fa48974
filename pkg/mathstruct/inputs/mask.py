"""
Structure-aware attention mask.

Inside the node segment a position may only attend to itself and to the
nodes it shares a tree edge with; every other pair of real positions is
visible. Padding rows and columns are closed.
"""

from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

from ..errors import SpanMismatch
from ..parsing.tree import OperatorTree

if TYPE_CHECKING:
    from .types import ModelInput


@dataclass
class MaskMatrix:
    m: np.ndarray  # (L, L) bool

    @property
    def size(self) -> int:
        return self.m.shape[0]

    def copy(self) -> "MaskMatrix":
        return MaskMatrix(self.m.copy())

    def node_block(self, node_span: range) -> np.ndarray:
        return self.m[node_span.start:node_span.stop, node_span.start:node_span.stop]

    def check(self, node_span: range, tree: Optional[OperatorTree] = None,
              pad_positions: Sequence[int] = ()) -> None:
        """Raise ValueError when an invariant of the matrix does not hold."""
        m = self.m
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("mask must be square")
        if not np.array_equal(m, m.T):
            raise ValueError("mask is not symmetric")
        real = np.ones(self.size, dtype=bool)
        real[np.asarray(list(pad_positions), dtype=int)] = False
        if not np.diagonal(m)[real].all():
            raise ValueError("diagonal must be open for real positions")
        if m[~real, :].any() or m[:, ~real].any():
            raise ValueError("padding rows and columns must be closed")
        outside = np.outer(real, real)
        outside[node_span.start:node_span.stop, node_span.start:node_span.stop] = False
        if (outside & ~m).any():
            raise ValueError("a pair outside the node block is closed")
        if tree is not None:
            expected = adjacency_or_identity(tree)
            if not np.array_equal(self.node_block(node_span), expected):
                raise ValueError("node block differs from the tree adjacency")


def adjacency_or_identity(tree: OperatorTree) -> np.ndarray:
    n = len(tree)
    block = np.eye(n, dtype=bool)
    for p, c in tree.edges:
        block[p, c] = block[c, p] = True
    return block


def mask_from_layout(ids: np.ndarray, node_span: range, opt: Optional[OperatorTree],
                     pad_id: int = 0) -> MaskMatrix:
    length = len(ids)
    n_nodes = len(node_span)
    if opt is None:
        if n_nodes:
            raise SpanMismatch(f"node span of {n_nodes} positions but no tree")
    elif n_nodes != len(opt):
        raise SpanMismatch(f"node span of {n_nodes} positions for a tree of {len(opt)} nodes")
    m = np.ones((length, length), dtype=bool)
    if n_nodes:
        s, e = node_span.start, node_span.stop
        m[s:e, s:e] = adjacency_or_identity(opt)
    pads = np.asarray(ids) == pad_id
    m[pads, :] = False
    m[:, pads] = False
    return MaskMatrix(m)


def build_mask(input: "ModelInput", opt: Optional[OperatorTree]) -> MaskMatrix:
    """Mask for an assembled input; the node span must match the tree size."""
    return mask_from_layout(input.ids, input.node_span, opt)

"""
Operator trees.

Nodes are stored in depth-first pre-order with the root at index 0; the
linear order is the one fed to the encoder.
"""

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

# Reserved node labels. Upper case so they never collide with operands.
SUP = "SUP"
SUB = "SUB"
FRAC = "FRAC"
SQRT = "SQRT"
ROOT = "ROOT"
TIMES = "TIMES"
NEG = "NEG"
RESERVED_LABELS = frozenset({SUP, SUB, FRAC, SQRT, ROOT, TIMES, NEG})


@dataclass(frozen=True)
class OptNode:
    label: str
    arity: int


@dataclass(frozen=True)
class Term:
    """Nested form of a tree; what the parser builds before flattening."""

    label: str
    children: Tuple["Term", ...] = ()


@dataclass(frozen=True)
class OperatorTree:
    nodes: Tuple[OptNode, ...]
    edges: FrozenSet[Tuple[int, int]]
    root: int = 0
    _children: Dict[int, Tuple[int, ...]] = field(
        default=None, init=False, repr=False, compare=False, hash=False
    )
    _parents: Dict[int, int] = field(
        default=None, init=False, repr=False, compare=False, hash=False
    )

    def __post_init__(self):
        children: Dict[int, List[int]] = {i: [] for i in range(len(self.nodes))}
        for parent, child in sorted(self.edges):
            children.setdefault(parent, []).append(child)
        object.__setattr__(
            self, "_children", {k: tuple(v) for k, v in children.items()}
        )
        object.__setattr__(self, "_parents", {c: p for p, c in self.edges})

    @classmethod
    def from_term(cls, term: Term) -> "OperatorTree":
        nodes: List[OptNode] = []
        edges = set()

        def visit(t: Term, parent: Optional[int]):
            index = len(nodes)
            nodes.append(OptNode(t.label, len(t.children)))
            if parent is not None:
                edges.add((parent, index))
            for child in t.children:
                visit(child, index)

        visit(term, None)
        return cls(tuple(nodes), frozenset(edges), 0)

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def labels(self) -> List[str]:
        return [n.label for n in self.nodes]

    def children(self, index: int) -> Tuple[int, ...]:
        return self._children[index]

    def parent(self, index: int) -> Optional[int]:
        return self._parents.get(index)

    def neighbors(self, index: int) -> List[int]:
        out = list(self.children(index))
        p = self.parent(index)
        if p is not None:
            out.append(p)
        return sorted(out)

    def adjacent(self, i: int, j: int) -> bool:
        return (i, j) in self.edges or (j, i) in self.edges

    def to_term(self, index: Optional[int] = None) -> Term:
        index = self.root if index is None else index
        return Term(
            self.nodes[index].label,
            tuple(self.to_term(c) for c in self.children(index)),
        )

    def prefix(self, k: int) -> "OperatorTree":
        """Tree over the first k pre-order nodes; parents always precede children."""
        if k >= len(self.nodes):
            return self
        if k < 1:
            raise ValueError("prefix must keep at least the root")
        edges = frozenset((p, c) for p, c in self.edges if c < k)
        arity = [0] * k
        for p, _ in edges:
            arity[p] += 1
        nodes = tuple(OptNode(self.nodes[i].label, arity[i]) for i in range(k))
        return OperatorTree(nodes, edges, self.root)

    def validate(self) -> None:
        """Raise ValueError unless this is a single rooted tree in pre-order."""
        n = len(self.nodes)
        if n == 0:
            raise ValueError("empty tree")
        if self.root != 0:
            raise ValueError("root must be the first pre-order node")
        if len(self.edges) != n - 1:
            raise ValueError(f"{len(self.edges)} edges for {n} nodes")
        parents: Dict[int, int] = {}
        for p, c in self.edges:
            if p == c:
                raise ValueError(f"self edge at {p}")
            if not (0 <= p < n and 0 <= c < n):
                raise ValueError(f"edge ({p}, {c}) out of range")
            if c in parents:
                raise ValueError(f"node {c} has two parents")
            parents[c] = p
        if self.root in parents:
            raise ValueError("root has a parent")
        for i, node in enumerate(self.nodes):
            if node.arity != len(self.children(i)):
                raise ValueError(f"arity mismatch at node {i}")
        order: List[int] = []

        def walk(i: int):
            order.append(i)
            for c in self.children(i):
                walk(c)

        walk(self.root)
        if order != list(range(n)):
            raise ValueError("nodes are not in pre-order")


def tree_from_parents(labels: Sequence[str], parents: Sequence[Optional[int]]) -> OperatorTree:
    """Build a tree from a pre-order label list and parent indices (root: None)."""
    edges = frozenset((p, c) for c, p in enumerate(parents) if p is not None)
    arity = [0] * len(labels)
    for p, _ in edges:
        arity[p] += 1
    return OperatorTree(
        tuple(OptNode(label, arity[i]) for i, label in enumerate(labels)), edges, 0
    )

"""
Single-line text records for operator trees.

    (= (SUP (c) (2)) (+ (SUP (a) (2)) (SUP (b) (2))))

Labels escape `(`, `)`, whitespace and the backslash itself with a backslash.
"""

from typing import List

from ..errors import DatasetFormatError
from .tree import OperatorTree, Term

_SPECIAL = set("()\\")


def _escape(label: str) -> str:
    return "".join("\\" + ch if ch in _SPECIAL or ch.isspace() else ch for ch in label)


def serialize_opt(tree: OperatorTree) -> str:
    parts: List[str] = []

    def emit(i: int):
        parts.append("(" + _escape(tree.nodes[i].label))
        for c in tree.children(i):
            parts.append(" ")
            emit(c)
        parts.append(")")

    emit(tree.root)
    return "".join(parts)


def deserialize_opt(text: str) -> OperatorTree:
    pos = 0
    n = len(text)

    def fail(message: str):
        raise DatasetFormatError(f"bad opt record at offset {pos}: {message}")

    def label() -> str:
        nonlocal pos
        out = []
        while pos < n:
            ch = text[pos]
            if ch == "\\":
                if pos + 1 >= n:
                    fail("dangling escape")
                out.append(text[pos + 1])
                pos += 2
                continue
            if ch in "()" or ch.isspace():
                break
            out.append(ch)
            pos += 1
        if not out:
            fail("empty label")
        return "".join(out)

    def term() -> Term:
        nonlocal pos
        if pos >= n or text[pos] != "(":
            fail("expected '('")
        pos += 1
        head = label()
        children = []
        while pos < n and text[pos] == " ":
            pos += 1
            children.append(term())
        if pos >= n or text[pos] != ")":
            fail("expected ')'")
        pos += 1
        return Term(head, tuple(children))

    result = term()
    if pos != n:
        fail("trailing characters")
    return OperatorTree.from_term(result)

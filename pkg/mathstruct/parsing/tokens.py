"""
LaTeX math tokenizer.

Commands stay whole (`\\frac`), every other character is its own token, so
joining tokens with single spaces and re-tokenizing gives the same list.
"""

from dataclasses import dataclass
from enum import Enum
from typing import List

from ..errors import TokenizeError


class TokenKind(str, Enum):
    COMMAND = "command"
    SYMBOL = "symbol"
    DIGIT = "digit"
    BRACE = "brace"
    RELATION = "relation"
    OPERATOR = "operator"


RELATION_COMMANDS = {
    "\\leq", "\\geq", "\\le", "\\ge", "\\neq", "\\ne",
    "\\approx", "\\equiv", "\\sim", "\\simeq", "\\propto",
}
OPERATOR_COMMANDS = {"\\times", "\\div", "\\cdot", "\\pm", "\\mp"}

_RELATION_CHARS = set("=<>")
_OPERATOR_CHARS = set("+-−*/^_,!|'")
_BRACE_CHARS = set("{}()[]")


@dataclass(frozen=True)
class MathToken:
    text: str
    kind: TokenKind

    def __str__(self) -> str:
        return self.text


def classify(text: str) -> TokenKind:
    """Kind of a single lexeme."""
    if text.startswith("\\"):
        if text in RELATION_COMMANDS:
            return TokenKind.RELATION
        if text in OPERATOR_COMMANDS:
            return TokenKind.OPERATOR
        return TokenKind.COMMAND
    if text.isdigit():
        return TokenKind.DIGIT
    if text in _BRACE_CHARS:
        return TokenKind.BRACE
    if text in _RELATION_CHARS:
        return TokenKind.RELATION
    if text in _OPERATOR_CHARS:
        return TokenKind.OPERATOR
    return TokenKind.SYMBOL


def make_token(text: str) -> MathToken:
    return MathToken(text, classify(text))


def tokenize_latex(src: str) -> List[MathToken]:
    """
    Split a LaTeX math string into lexemes.

    Raises TokenizeError on unbalanced `{`/`}` or a trailing lone backslash.
    """
    tokens: List[MathToken] = []
    depth = 0
    i, n = 0, len(src)
    while i < n:
        ch = src[i]
        if ch.isspace():
            i += 1
            continue
        if ch == "\\":
            if i + 1 >= n:
                raise TokenizeError(f"isolated trailing backslash at offset {i}")
            j = i + 1
            if src[j].isascii() and src[j].isalpha():
                while j < n and src[j].isascii() and src[j].isalpha():
                    j += 1
                tokens.append(make_token(src[i:j]))
                i = j
                continue
            if src[j].isspace():
                # control space carries no content
                i = j + 1
                continue
            tokens.append(make_token(src[i:j + 1]))
            i = j + 1
            continue
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth < 0:
                raise TokenizeError(f"unbalanced '}}' at offset {i}")
        tokens.append(make_token(ch))
        i += 1
    if depth != 0:
        raise TokenizeError(f"{depth} unclosed '{{'")
    return tokens


def join_tokens(tokens: List[MathToken]) -> str:
    return " ".join(t.text for t in tokens)

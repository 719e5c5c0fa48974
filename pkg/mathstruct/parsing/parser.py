"""
Operator-precedence parser from LaTeX tokens to operator trees.

Binding powers, loosest first: relations, additive, multiplicative
(explicit operators and juxtaposition), function application, scripts.
All binary operators are left-associative.
"""

from typing import List, Optional, Sequence, Tuple

from ..errors import ParseError
from .tokens import MathToken, TokenKind, RELATION_COMMANDS
from .tree import (
    FRAC, NEG, ROOT, SQRT, SUB, SUP, TIMES, OperatorTree, Term,
)

GREEK = {
    "\\alpha", "\\beta", "\\gamma", "\\delta", "\\epsilon", "\\varepsilon",
    "\\zeta", "\\eta", "\\theta", "\\vartheta", "\\iota", "\\kappa",
    "\\lambda", "\\mu", "\\nu", "\\xi", "\\pi", "\\varpi", "\\rho",
    "\\varrho", "\\sigma", "\\varsigma", "\\tau", "\\upsilon", "\\phi",
    "\\varphi", "\\chi", "\\psi", "\\omega", "\\Gamma", "\\Delta",
    "\\Theta", "\\Lambda", "\\Xi", "\\Pi", "\\Sigma", "\\Upsilon", "\\Phi",
    "\\Psi", "\\Omega",
}
OPERAND_COMMANDS = GREEK | {"\\infty", "\\ell", "\\hbar", "\\emptyset"}
FUNCTION_COMMANDS = {
    "\\sin", "\\cos", "\\tan", "\\cot", "\\sec", "\\csc", "\\arcsin",
    "\\arccos", "\\arctan", "\\sinh", "\\cosh", "\\tanh", "\\log", "\\ln",
    "\\exp", "\\det", "\\max", "\\min",
}
# dropped before parsing
IGNORED_COMMANDS = {
    "\\left", "\\right", "\\,", "\\;", "\\:", "\\!", "\\quad", "\\qquad",
    "\\displaystyle",
}

RELATION_BP = 10
ADDITIVE_BP = 20
UNARY_BP = 25
MULTIPLICATIVE_BP = 30
FUNCTION_BP = 35

ADDITIVE = {"+", "-", "−", "\\pm", "\\mp"}
MULTIPLICATIVE = {"\\times", "\\div", "\\cdot", "*", "/"}
_OPEN = {"(": ")", "[": "]", "{": "}"}


def _label(text: str) -> str:
    return "-" if text == "−" else text


class _Parser:
    def __init__(self, tokens: Sequence[MathToken]):
        self.toks: List[Tuple[int, MathToken]] = [
            (i, t) for i, t in enumerate(tokens) if t.text not in IGNORED_COMMANDS
        ]
        self.pos = 0
        self.end_index = len(tokens)

    # token stream

    def peek(self) -> Optional[MathToken]:
        if self.pos < len(self.toks):
            return self.toks[self.pos][1]
        return None

    def index(self) -> int:
        if self.pos < len(self.toks):
            return self.toks[self.pos][0]
        return self.end_index

    def advance(self) -> MathToken:
        tok = self.peek()
        if tok is None:
            raise ParseError("unexpected end of formula", self.index())
        self.pos += 1
        return tok

    def expect(self, text: str) -> None:
        tok = self.peek()
        if tok is None or tok.text != text:
            found = "end" if tok is None else repr(tok.text)
            raise ParseError(f"expected {text!r}, found {found}", self.index())
        self.pos += 1

    # classification

    @staticmethod
    def starts_operand(tok: Optional[MathToken]) -> bool:
        if tok is None:
            return False
        text = tok.text
        if tok.kind == TokenKind.DIGIT or text in _OPEN:
            return True
        if tok.kind == TokenKind.SYMBOL and len(text) == 1 and text.isalpha():
            return True
        return (
            text in OPERAND_COMMANDS
            or text in FUNCTION_COMMANDS
            or text in ("\\frac", "\\sqrt")
        )

    def lbp(self, tok: Optional[MathToken]) -> int:
        if tok is None:
            return 0
        if tok.kind == TokenKind.RELATION and (
            tok.text in "=<>" or tok.text in RELATION_COMMANDS
        ):
            return RELATION_BP
        if tok.text in ADDITIVE:
            return ADDITIVE_BP
        if tok.text in MULTIPLICATIVE:
            return MULTIPLICATIVE_BP
        if self.starts_operand(tok):
            return MULTIPLICATIVE_BP
        return 0

    # grammar

    def expression(self, rbp: int = 0) -> Term:
        left = self.nud()
        while rbp < self.lbp(self.peek()):
            left = self.led(left)
        return left

    def led(self, left: Term) -> Term:
        tok = self.peek()
        if tok.text in MULTIPLICATIVE or tok.text in ADDITIVE or self.lbp(tok) == RELATION_BP:
            self.advance()
            right = self.expression(self.lbp(tok))
            return Term(_label(tok.text), (left, right))
        # juxtaposition: implicit multiplication
        right = self.expression(MULTIPLICATIVE_BP)
        return Term(TIMES, (left, right))

    def nud(self) -> Term:
        tok = self.peek()
        if tok is None:
            raise ParseError("unexpected end of formula", self.index())
        text = tok.text
        if text in ("-", "−"):
            self.advance()
            return Term(NEG, (self.expression(UNARY_BP),))
        if text == "+":
            self.advance()
            return self.expression(UNARY_BP)
        if text in FUNCTION_COMMANDS:
            self.advance()
            return Term(text, (self.expression(FUNCTION_BP),))
        return self.scripts(self.primary())

    def primary(self) -> Term:
        start = self.index()
        tok = self.advance()
        text = tok.text
        if tok.kind == TokenKind.DIGIT:
            return Term(self.number(text))
        if tok.kind == TokenKind.SYMBOL and len(text) == 1 and text.isalpha():
            return Term(text)
        if text in OPERAND_COMMANDS:
            return Term(text)
        if text in _OPEN:
            if self.peek() is not None and self.peek().text == _OPEN[text]:
                raise ParseError("empty group", self.index())
            inner = self.expression(0)
            self.expect(_OPEN[text])
            return inner
        if text == "\\frac":
            numerator = self.argument()
            denominator = self.argument()
            return Term(FRAC, (numerator, denominator))
        if text == "\\sqrt":
            nxt = self.peek()
            if nxt is not None and nxt.text == "[":
                self.advance()
                index = self.expression(0)
                self.expect("]")
                return Term(ROOT, (index, self.argument()))
            return Term(SQRT, (self.argument(),))
        raise ParseError(f"unsupported token {text!r}", start)

    def number(self, first: str) -> str:
        digits = first
        while self.peek() is not None and self.peek().kind == TokenKind.DIGIT:
            digits += self.advance().text
        # decimal part only when a digit follows the point
        if (
            self.peek() is not None
            and self.peek().text == "."
            and self.pos + 1 < len(self.toks)
            and self.toks[self.pos + 1][1].kind == TokenKind.DIGIT
        ):
            digits += self.advance().text
            while self.peek() is not None and self.peek().kind == TokenKind.DIGIT:
                digits += self.advance().text
        return digits

    def argument(self) -> Term:
        """Braced group or a single-token atom (`\\frac12`, `x^2`)."""
        tok = self.peek()
        if tok is None:
            raise ParseError("missing argument", self.index())
        if tok.text == "{":
            self.advance()
            if self.peek() is not None and self.peek().text == "}":
                raise ParseError("empty group", self.index())
            inner = self.expression(0)
            self.expect("}")
            return inner
        if tok.kind == TokenKind.DIGIT:
            self.advance()
            return Term(tok.text)
        if (tok.kind == TokenKind.SYMBOL and len(tok.text) == 1 and tok.text.isalpha()) or (
            tok.text in OPERAND_COMMANDS
        ):
            self.advance()
            return Term(tok.text)
        raise ParseError(f"unsupported argument {tok.text!r}", self.index())

    def scripts(self, base: Term) -> Term:
        while self.peek() is not None and self.peek().text in ("^", "_"):
            op = self.advance().text
            base = Term(SUP if op == "^" else SUB, (base, self.argument()))
        return base


def parse_term(tokens: Sequence[MathToken]) -> Term:
    parser = _Parser(tokens)
    if parser.peek() is None:
        raise ParseError("empty formula", 0)
    term = parser.expression(0)
    if parser.peek() is not None:
        raise ParseError(f"unexpected token {parser.peek().text!r}", parser.index())
    return term


def parse_to_opt(tokens: Sequence[MathToken]) -> OperatorTree:
    """Parse LaTeX tokens into an operator tree (pre-order node list)."""
    return OperatorTree.from_term(parse_term(tokens))

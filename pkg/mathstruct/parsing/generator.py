"""Small random generator of well-formed formulas inside the supported grammar."""

import numpy as np

_LETTERS = list("abcdxyzmnEF")
_GREEK = ["\\alpha", "\\beta", "\\theta", "\\pi"]
_BINARY = ["+", "-", "\\times", "\\div", "/", "\\cdot"]
_RELATIONS = ["=", "<", ">", "\\leq", "\\geq"]
_FUNCTIONS = ["\\sin", "\\cos", "\\log", "\\exp"]


def _operand(rng: np.random.Generator) -> str:
    roll = rng.random()
    if roll < 0.55:
        return str(rng.choice(_LETTERS))
    if roll < 0.85:
        return str(int(rng.integers(0, 100)))
    return str(rng.choice(_GREEK))


def random_expression(rng: np.random.Generator, depth: int) -> str:
    if depth <= 0 or rng.random() < 0.25:
        return _operand(rng)
    kind = int(rng.integers(0, 7))
    if kind == 0:
        op = str(rng.choice(_BINARY))
        return f"{random_expression(rng, depth - 1)} {op} {random_expression(rng, depth - 1)}"
    if kind == 1:
        return f"\\frac{{{random_expression(rng, depth - 1)}}}{{{random_expression(rng, depth - 1)}}}"
    if kind == 2:
        base = str(rng.choice(_LETTERS))
        script = "^" if rng.random() < 0.6 else "_"
        return f"{base}{script}{{{random_expression(rng, depth - 1)}}}"
    if kind == 3:
        return f"\\sqrt{{{random_expression(rng, depth - 1)}}}"
    if kind == 4:
        return f"({random_expression(rng, depth - 1)})"
    if kind == 5:
        return f"{rng.choice(_FUNCTIONS)} {_operand(rng)}"
    # juxtaposition of a coefficient and a letter
    return f"{int(rng.integers(1, 10))}{rng.choice(_LETTERS)}"


def random_formula(rng: np.random.Generator, max_depth: int = 3) -> str:
    """A relation or a bare expression built from the supported subset."""
    lhs = random_expression(rng, max_depth)
    if rng.random() < 0.5:
        return lhs
    return f"{lhs} {rng.choice(_RELATIONS)} {random_expression(rng, max_depth)}"

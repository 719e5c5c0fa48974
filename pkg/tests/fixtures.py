"""Small in-memory builders shared by the test cases."""

import json
import os
from typing import List, Optional, Sequence

import numpy as np

from mathstruct.corpus.dataset import MATH_PLACEHOLDER, FormulaContextPair
from mathstruct.corpus.vocab import SPECIALS, Vocab, count_tokens
from mathstruct.nn.config import ModelConfig
from mathstruct.nn.params import ParameterSet, parameter_shapes
from mathstruct.parsing.parser import parse_to_opt
from mathstruct.parsing.tokens import tokenize_latex

PYTHAGORAS = "c^2=a^2+b^2"
FRACTION = r"\frac{a+b}{c+d}"

FILLER = (
    "we study the relation between the quantities introduced above and show "
    "how the following identity can be used to derive the main estimate of this "
    "section in a compact and elementary way without further assumptions "
)


def make_pair(latex: str, context: Optional[Sequence[str]] = None, topic: Optional[str] = None,
              source_id: str = "fixture") -> FormulaContextPair:
    tokens = tokenize_latex(latex)
    words = list(context) if context is not None else ["see", MATH_PLACEHOLDER, "here"]
    return FormulaContextPair(latex, tokens, words, parse_to_opt(tokens), source_id, topic)


def vocab_for(pairs: Sequence[FormulaContextPair], extra: int = 0) -> Vocab:
    """Vocabulary over the pairs, optionally padded with unused filler tokens."""
    counts = count_tokens(pairs)
    for k in range(extra):
        counts[f"zz{k:04d}"] = 1
    return Vocab.from_counts(counts)


TOY_FORMULAS = [
    "E=mc^2", PYTHAGORAS, FRACTION, "x+y=z", r"\sqrt{x}+1", "a_1+a_2", r"\sin x",
    "y=2x+1", r"\alpha+\beta", r"\frac{1}{2}", "f(x)=x^2", "a-b", "2y", r"x\times y",
    r"\frac{x}{y}=z", "p<q",
]


def toy_pairs(n: int = 32) -> List[FormulaContextPair]:
    """Pairs cycle through TOY_FORMULAS; each formula always carries the same context."""
    pairs = []
    for i in range(n):
        k = i % len(TOY_FORMULAS)
        words = ["let", f"w{k % 8}", "be", "given", MATH_PLACEHOLDER, "holds", f"t{k % 5}"]
        pairs.append(make_pair(TOY_FORMULAS[k], words, source_id=f"doc{i}"))
    return pairs


def tiny_config(vocab_size: int, **overrides) -> ModelConfig:
    values = dict(layers=2, hidden=16, heads=4, ffn_mult=2, vocab_size=vocab_size, max_len=48)
    values.update(overrides)
    return ModelConfig(**values)


def tex_document(equations: Sequence[str], prose_repeats: int = 3) -> str:
    """Prose with the given equation bodies in `equation` environments between paragraphs."""
    paragraph = FILLER * prose_repeats
    parts = ["\\documentclass{article}", "\\begin{document}", paragraph]
    for body in equations:
        parts.append("\\begin{equation}" + body + "\\end{equation}")
        parts.append(paragraph)
    parts.append("\\end{document}")
    return "\n".join(parts)


def rng(seed: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed)


DATA_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data")
GOLDEN_CHECKPOINT = os.path.join(DATA_DIR, "golden.mfmr")
GOLDEN_OUTPUTS = os.path.join(DATA_DIR, "golden_outputs.json")
GOLDEN_CONFIG = ModelConfig(layers=2, hidden=4, heads=2, ffn_mult=2, vocab_size=16, max_len=16)


def golden_params(cfg: ModelConfig = GOLDEN_CONFIG) -> ParameterSet:
    """
    The parameters frozen in golden.mfmr: entry i of the k-th tensor is
    ((7i + 11k) mod 17 - 8) / 32, plus 1 for layer-norm gains. Every value is
    exact in float64.
    """
    tensors = {}
    for k, (name, shape) in enumerate(parameter_shapes(cfg).items()):
        i = np.arange(int(np.prod(shape)))
        values = ((7 * i + 11 * k) % 17 - 8) / 32
        if name.endswith(".gamma"):
            values = values + 1.0
        tensors[name] = values.reshape(shape)
    return ParameterSet(tensors)


def golden_vocab() -> Vocab:
    return Vocab(list(SPECIALS) + ["\\frac", "{", "}", "a", "+", "b", "c", "d"])


def golden_outputs() -> dict:
    with open(GOLDEN_OUTPUTS, encoding="utf-8") as fh:
        return json.load(fh)

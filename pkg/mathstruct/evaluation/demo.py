from typing import List, Sequence

from pydantic import BaseModel

from .embedding import EncoderModel, cosine, embed

DEMO_ANCHOR = r"\frac{a+b}{c+d}"

# look-alikes of the anchor: same symbols, different structure or operators
DEMO_FORMULAS = [
    r"\frac{a+b}{c+d}",
    r"(a+b)/(c+d)",
    r"(a+b)\div(c+d)",
    r"(a+b)\times(c+d)",
    r"\frac{1+2}{3+4}",
    r"\frac{5+6}{7+8}",
    r"(1+2)\times(3+4)",
    r"(1+2)/(3+4)",
    r"\frac{a-b}{c-d}",
    r"\frac{c+d}{a+b}",
    r"\frac{a+b}{c}",
    r"a+\frac{b}{c+d}",
    r"(a+b)(c+d)",
    r"\frac{a}{c+d}+\frac{b}{c+d}",
    r"\frac{a+b+c}{d}",
]


class DemoRow(BaseModel):
    rank: int
    formula: str
    similarity: float


def similarity_demo(anchor: str, others: Sequence[str], model: EncoderModel,
                    pool: str = "mean2") -> List[DemoRow]:
    """Rank formulas by cosine to the anchor (formula-only inputs); ties keep input order."""
    if not others:
        return []
    a = embed(anchor, model, pool=pool)
    scored = [(cosine(a, embed(f, model, pool=pool)), i, f) for i, f in enumerate(others)]
    scored.sort(key=lambda t: (-t[0], t[1]))
    return [DemoRow(rank=r, formula=f, similarity=s) for r, (s, _, f) in enumerate(scored, start=1)]


def format_table(rows: Sequence[DemoRow]) -> str:
    width = max([len("Formula")] + [len(r.formula) for r in rows])
    lines = [f"{'Rank':<5} {'Formula':<{width}} Similarity"]
    for r in rows:
        lines.append(f"{r.rank:<5} {r.formula:<{width}} {r.similarity:.4f}")
    return "\n".join(lines)

"""
Mining formula-context pairs from raw TeX sources.

Every display equation is replaced by a `[MATH]` marker in a cleaned prose
stream. A mined equation keeps a window of at least `min_context_chars`
characters grown evenly on both sides, snapped to word boundaries and never
crossing a neighbouring equation.
"""

import math
import re
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from ..errors import ParseError, TokenizeError
from ..observability.logger import logger
from ..parsing.parser import parse_to_opt
from ..parsing.tokens import tokenize_latex
from .dataset import MATH_PLACEHOLDER, FormulaContextPair

log = logger.bind(component="corpus")

DEFAULT_MIN_CONTEXT_CHARS = 400

_COMMENT = re.compile(r"(?<!\\)%.*$", re.M)
_DISPLAY = re.compile(
    r"\\begin\{(?P<env>equation\*?|align\*?|gather\*?|multline\*?|eqnarray\*?|displaymath)\}"
    r"(?P<body>.*?)\\end\{(?P=env)\}"
    r"|\\\[(?P<bracket>.*?)\\\]"
    r"|\$\$(?P<dollars>.*?)\$\$",
    re.S,
)
_MINED_ENVS = {"equation", "equation*"}
_REFERENCE = re.compile(
    r"\\(?:cite[pt]?|ref|eqref|cref|Cref|label|url|includegraphics)\*?(?:\[[^\]]*\])?\{[^}]*\}"
)
_ENV_MARKER = re.compile(r"\\(?:begin|end)\{[^}]*\}")
_ESCAPED = re.compile(r"\\([%&$#_{}])")
_COMMAND = re.compile(r"\\[A-Za-z]+\*?|\\.")
_BODY_NOISE = re.compile(r"\\label\{[^}]*\}|\\nonumber|\\notag")
_WORD = re.compile(r"\[math\]|[^\W_]+")


@dataclass
class ExtractionResult:
    pairs: List[FormulaContextPair] = field(default_factory=list)
    equations: int = 0
    skipped_unparsed: int = 0
    skipped_context: int = 0


def tokenize_context(text: str) -> List[str]:
    """Lowercased word split on whitespace and punctuation; keeps the placeholder."""
    return [
        MATH_PLACEHOLDER if w == "[math]" else w
        for w in _WORD.findall(text.lower())
    ]


def clean_prose(text: str) -> str:
    text = _REFERENCE.sub(" ", text)
    text = _ENV_MARKER.sub(" ", text)
    text = _ESCAPED.sub(r"\1", text)
    text = text.replace("$", " ")
    text = _COMMAND.sub(" ", text)
    text = re.sub(r"[{}~]", " ", text)
    return re.sub(r"\s+", " ", text).strip()


def clean_equation_body(body: str) -> str:
    body = _BODY_NOISE.sub(" ", body)
    body = re.sub(r"\s+", " ", body).strip()
    return body.rstrip(".,; ").strip()


def _document_body(tex: str) -> str:
    tex = _COMMENT.sub("", tex)
    begin = tex.find("\\begin{document}")
    if begin >= 0:
        tex = tex[begin + len("\\begin{document}"):]
        end = tex.find("\\end{document}")
        if end >= 0:
            tex = tex[:end]
    return tex


def _marked_stream(tex: str) -> Tuple[str, List[Tuple[int, int, Optional[str]]]]:
    """Cleaned prose with a marker per display block; mined bodies ride along."""
    parts: List[str] = []
    markers: List[Tuple[int, int, Optional[str]]] = []
    length = 0
    cursor = 0

    def append(piece: str):
        nonlocal length
        if not piece:
            return
        if parts:
            parts.append(" ")
            length += 1
        parts.append(piece)
        length += len(piece)

    for match in _DISPLAY.finditer(tex):
        append(clean_prose(tex[cursor:match.start()]))
        append(MATH_PLACEHOLDER)
        body = match.group("body") if match.group("env") in _MINED_ENVS else None
        markers.append((length - len(MATH_PLACEHOLDER), length, body))
        cursor = match.end()
    append(clean_prose(tex[cursor:]))
    return "".join(parts), markers


def _window(doc: str, start: int, end: int, lo_bound: int, hi_bound: int,
            min_chars: int) -> Optional[Tuple[int, int]]:
    left_avail = start - lo_bound
    right_avail = hi_bound - end
    if left_avail + right_avail < min_chars:
        return None
    take_left = min(left_avail, math.ceil(min_chars / 2))
    take_right = min(right_avail, min_chars - take_left)
    take_left = min(left_avail, min_chars - take_right)
    lo, hi = start - take_left, end + take_right
    while lo > lo_bound and not doc[lo - 1].isspace():
        lo -= 1
    while hi < hi_bound and not doc[hi].isspace():
        hi += 1
    return lo, hi


def extract_pairs(tex_source: str, min_context_chars: int = DEFAULT_MIN_CONTEXT_CHARS,
                  source_id: str = "", topic: Optional[str] = None) -> ExtractionResult:
    """
    One pair per parseable single-line `equation` environment.

    Unparseable bodies and windows that cannot reach the minimum length are
    skipped and counted, never raised.
    """
    result = ExtractionResult()
    doc, markers = _marked_stream(_document_body(tex_source))
    for k, (start, end, body) in enumerate(markers):
        if body is None:
            continue
        result.equations += 1
        formula = clean_equation_body(body)
        if "\\\\" in formula or "&" in formula:
            result.skipped_unparsed += 1
            log.warning("equation_skipped", source=source_id, equation=k, reason="multiline")
            continue
        try:
            tokens = tokenize_latex(formula)
            opt = parse_to_opt(tokens)
        except (TokenizeError, ParseError) as e:
            result.skipped_unparsed += 1
            log.warning("equation_skipped", source=source_id, equation=k, reason="unparsed", error=str(e))
            continue
        # neighbours are followed / preceded by one separator space
        lo_bound = markers[k - 1][1] + 1 if k > 0 else 0
        hi_bound = markers[k + 1][0] - 1 if k + 1 < len(markers) else len(doc)
        span = _window(doc, start, end, lo_bound, hi_bound, min_context_chars)
        if span is None:
            result.skipped_context += 1
            log.warning("equation_skipped", source=source_id, equation=k, reason="short_context")
            continue
        context_text = doc[span[0]:span[1]].strip()
        context_tokens = tokenize_context(context_text)
        if context_tokens.count(MATH_PLACEHOLDER) != 1:
            result.skipped_context += 1
            log.warning("equation_skipped", source=source_id, equation=k, reason="short_context")
            continue
        result.pairs.append(FormulaContextPair(
            formula_latex=formula,
            formula_tokens=tokens,
            context_tokens=context_tokens,
            opt=opt,
            source_id=source_id,
            topic_label=topic,
            context_text=context_text,
        ))
    return result

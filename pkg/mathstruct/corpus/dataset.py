"""
Formula-context pairs and their JSON-lines dataset files.

One object per line:
    {"formula", "formula_tokens", "context_tokens", "opt", "source_id", "topic"}
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import jsonschema

from ..errors import ArtifactIOError, DatasetFormatError
from ..parsing.serialize import deserialize_opt, serialize_opt
from ..parsing.tokens import MathToken, make_token
from ..parsing.tree import OperatorTree

MATH_PLACEHOLDER = "[MATH]"

RECORD_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "required": ["formula", "formula_tokens", "context_tokens", "opt", "source_id", "topic"],
    "properties": {
        "formula": {"type": "string"},
        "formula_tokens": {"type": "array", "items": {"type": "string", "minLength": 1}},
        "context_tokens": {"type": "array", "items": {"type": "string", "minLength": 1}},
        "opt": {"type": "string", "minLength": 3},
        "source_id": {"type": "string"},
        "topic": {"type": ["string", "null"]},
    },
    "additionalProperties": False,
}
_validator = jsonschema.Draft7Validator(RECORD_SCHEMA)


@dataclass
class FormulaContextPair:
    formula_latex: str
    formula_tokens: List[MathToken]
    context_tokens: List[str]
    opt: OperatorTree
    source_id: str = ""
    topic_label: Optional[str] = None
    # cleaned prose window the tokens came from; not persisted
    context_text: Optional[str] = field(default=None, compare=False, repr=False)

    def with_context(self, context_tokens: List[str]) -> "FormulaContextPair":
        return FormulaContextPair(
            self.formula_latex, self.formula_tokens, list(context_tokens),
            self.opt, self.source_id, self.topic_label,
        )

    def to_record(self) -> Dict[str, Any]:
        return {
            "formula": self.formula_latex,
            "formula_tokens": [t.text for t in self.formula_tokens],
            "context_tokens": list(self.context_tokens),
            "opt": serialize_opt(self.opt),
            "source_id": self.source_id,
            "topic": self.topic_label,
        }

    @classmethod
    def from_record(cls, record: Dict[str, Any], line: Optional[int] = None) -> "FormulaContextPair":
        errors = sorted(_validator.iter_errors(record), key=lambda e: list(e.path))
        if errors:
            raise DatasetFormatError(errors[0].message, line)
        try:
            opt = deserialize_opt(record["opt"])
        except DatasetFormatError as e:
            raise DatasetFormatError(str(e), line) from e
        return cls(
            formula_latex=record["formula"],
            formula_tokens=[make_token(t) for t in record["formula_tokens"]],
            context_tokens=list(record["context_tokens"]),
            opt=opt,
            source_id=record["source_id"],
            topic_label=record["topic"],
        )


def write_dataset(pairs: Iterable[FormulaContextPair], path: Union[str, Path]) -> int:
    count = 0
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for pair in pairs:
                fh.write(json.dumps(pair.to_record(), ensure_ascii=False) + "\n")
                count += 1
    except OSError as e:
        raise ArtifactIOError(str(path), e.strerror or str(e)) from e
    return count


def iter_dataset(path: Union[str, Path]):
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(str(path), e.strerror or str(e)) from e
    with fh:
        for number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetFormatError(f"invalid JSON: {e.msg}", number) from e
            yield FormulaContextPair.from_record(record, number)


def read_dataset(path: Union[str, Path]) -> List[FormulaContextPair]:
    return list(iter_dataset(path))

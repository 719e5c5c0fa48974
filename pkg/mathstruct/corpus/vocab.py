import json
from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Union

from ..errors import ArtifactIOError, DatasetFormatError, EmptyDataset
from .dataset import FormulaContextPair, iter_dataset

PAD, UNK, CLS, SEP, MASK, MATH = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[MATH]"
SPECIALS = (PAD, UNK, CLS, SEP, MASK, MATH)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID, MATH_ID = range(len(SPECIALS))


class Vocab:
    """Dense token <-> id map with the special tokens fixed at ids 0-5."""

    def __init__(self, tokens: Iterable[str], freq: Mapping[str, int] = None, min_freq: int = 1):
        self.tokens: List[str] = list(tokens)
        if tuple(self.tokens[:len(SPECIALS)]) != SPECIALS:
            raise ValueError("vocabulary must start with the special tokens")
        self.id_of: Dict[str, int] = {t: i for i, t in enumerate(self.tokens)}
        if len(self.id_of) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.freq: Dict[str, int] = dict(freq or {})
        self.min_freq = min_freq

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.id_of

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def encode(self, token: str) -> int:
        return self.id_of.get(token, UNK_ID)

    def decode(self, index: int) -> str:
        return self.tokens[index]

    @property
    def first_regular_id(self) -> int:
        return len(SPECIALS)

    @classmethod
    def from_counts(cls, counts: Mapping[str, int], min_freq: int = 1) -> "Vocab":
        kept = [t for t, c in counts.items() if c >= min_freq and t not in SPECIALS]
        kept.sort(key=lambda t: (-counts[t], t))
        return cls(list(SPECIALS) + kept, {t: counts[t] for t in kept}, min_freq)

    def save(self, path: Union[str, Path]) -> None:
        payload = {"tokens": self.tokens, "freq": self.freq, "min_freq": self.min_freq}
        try:
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                json.dump(payload, fh, ensure_ascii=False, indent=1)
                fh.write("\n")
        except OSError as e:
            raise ArtifactIOError(str(path), e.strerror or str(e)) from e

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Vocab":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                payload = json.load(fh)
        except OSError as e:
            raise ArtifactIOError(str(path), e.strerror or str(e)) from e
        except json.JSONDecodeError as e:
            raise DatasetFormatError(f"vocabulary file is not JSON: {e.msg}") from e
        try:
            return cls(payload["tokens"], payload.get("freq", {}), payload.get("min_freq", 1))
        except (KeyError, ValueError) as e:
            raise DatasetFormatError(f"bad vocabulary file: {e}") from e


def pair_tokens(pair: FormulaContextPair) -> List[str]:
    """Formula tokens, context words and tree labels: everything the encoder sees."""
    return (
        [t.text for t in pair.formula_tokens]
        + list(pair.context_tokens)
        + pair.opt.labels
    )


def count_tokens(pairs: Iterable[FormulaContextPair]) -> Counter:
    counts: Counter = Counter()
    for pair in pairs:
        counts.update(pair_tokens(pair))
    return counts


def build_vocab(dataset: Union[str, Path], min_freq: int = 1) -> Vocab:
    counts = Counter()
    records = 0
    for pair in iter_dataset(dataset):
        counts.update(pair_tokens(pair))
        records += 1
    if records == 0:
        raise EmptyDataset(f"{dataset} holds no records")
    return Vocab.from_counts(counts, min_freq)

"""Deterministic word-level tokenizer with reserved special tokens.

A stand-in for a pretrained subword tokenizer: the rest of the system only
relies on the interface (build once, then text -> token ids), so a subword
implementation can be slotted in without touching chunking or the model.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

__all__ = [
    "PAD_ID",
    "UNK_ID",
    "CLS_ID",
    "SEP_ID",
    "RESERVED_TOKENS",
    "TokenizerConfig",
    "Vocabulary",
    "split_tokens",
    "build_vocab",
    "encode",
]

PAD_ID = 0
UNK_ID = 1
CLS_ID = 2
SEP_ID = 3
RESERVED_TOKENS = ("<pad>", "<unk>", "<cls>", "<sep>")


@dataclass(frozen=True)
class TokenizerConfig:
    lowercase: bool = True
    max_vocab: int = 10_000
    min_token_frequency: int = 1

    def __post_init__(self) -> None:
        if self.max_vocab < len(RESERVED_TOKENS):
            raise ValueError(f"max_vocab must be >= {len(RESERVED_TOKENS)}")
        if self.min_token_frequency < 1:
            raise ValueError("min_token_frequency must be >= 1")


def split_tokens(text: str, lowercase: bool = True) -> list[str]:
    """Whitespace-and-punctuation split; punctuation becomes standalone tokens."""
    if lowercase:
        text = text.lower()
    tokens: list[str] = []
    word = ""
    for ch in text:
        if ch.isalnum() or ch == "_":
            word += ch
        else:
            if word:
                tokens.append(word)
                word = ""
            if not ch.isspace():
                tokens.append(ch)
    if word:
        tokens.append(word)
    return tokens


class Vocabulary:
    """Immutable dense token -> id bijection with fixed reserved ids 0..3."""

    def __init__(self, token_to_id: dict[str, int], lowercase: bool = True):
        for idx, tok in enumerate(RESERVED_TOKENS):
            if token_to_id.get(tok) != idx:
                raise ValueError(f"reserved token {tok!r} must have id {idx}")
        ids = sorted(token_to_id.values())
        if ids != list(range(len(token_to_id))):
            raise ValueError("ids must be dense in [0, size)")
        self._token_to_id = dict(token_to_id)
        self._id_to_token = [None] * len(token_to_id)
        for tok, idx in token_to_id.items():
            self._id_to_token[idx] = tok
        self.lowercase = lowercase

    @property
    def size(self) -> int:
        return len(self._token_to_id)

    def id_of(self, token: str) -> int:
        return self._token_to_id.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        return self._id_to_token[idx]

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, Vocabulary)
            and self._token_to_id == other._token_to_id
            and self.lowercase == other.lowercase
        )

    def to_json_dict(self) -> dict:
        return {"lowercase": self.lowercase, "tokens": dict(self._token_to_id)}

    @classmethod
    def from_json_dict(cls, data: dict) -> "Vocabulary":
        return cls(data["tokens"], lowercase=data["lowercase"])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json_dict(), ensure_ascii=False, sort_keys=True),
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.from_json_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def build_vocab(texts: Iterable[str], config: TokenizerConfig = TokenizerConfig()) -> Vocabulary:
    """Frequency-ranked vocabulary, ties broken lexicographically.

    Reserved tokens always occupy ids 0..3; the remaining ``max_vocab - 4``
    slots go to the most frequent tokens meeting ``min_token_frequency``.
    """
    counts: Counter[str] = Counter()
    for text in texts:
        counts.update(split_tokens(text, lowercase=config.lowercase))
    ranked = sorted(
        (tok for tok, c in counts.items() if c >= config.min_token_frequency),
        key=lambda tok: (-counts[tok], tok),
    )
    kept = ranked[: config.max_vocab - len(RESERVED_TOKENS)]
    token_to_id = {tok: i for i, tok in enumerate(RESERVED_TOKENS)}
    for offset, tok in enumerate(kept):
        token_to_id[tok] = len(RESERVED_TOKENS) + offset
    return Vocabulary(token_to_id, lowercase=config.lowercase)


def encode(text: str, vocab: Vocabulary) -> list[int]:
    """Token ids for ``text``; out-of-vocabulary tokens map to UNK.

    Never emits PAD/CLS/SEP: those are added by the chunker.
    """
    return [vocab.id_of(tok) for tok in split_tokens(text, lowercase=vocab.lowercase)]

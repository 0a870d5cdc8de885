"""Document -> encoded chunks of at most 128 tokens (CLS/SEP included),
overlap sub-splitting for long paragraphs, order-preserving random chunk
sampling, and document length features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import Document
from .tokenizer import CLS_ID, SEP_ID, Vocabulary, encode

__all__ = [
    "FEATURE_NAMES",
    "SamplerConfig",
    "EncodedChunk",
    "FeatureVector",
    "ChunkSample",
    "EmptyDocumentError",
    "encode_document",
    "sample_chunks",
    "length_features",
]

# canonical feature order: character count, paragraph count, approx pages
FEATURE_NAMES = ("nc", "np", "app")
CHARS_PER_PAGE = 1800


class EmptyDocumentError(ValueError):
    """Document yielded no chunks."""


@dataclass(frozen=True)
class SamplerConfig:
    """Chunk geometry and sampling size.

    ``max_chunk_len`` counts the CLS and SEP tokens, so the body capacity is
    ``max_chunk_len - 2``; over-long paragraphs are sub-split into windows
    sharing ``overlap`` body tokens.
    """

    sample_size: int = 48
    max_chunk_len: int = 128
    overlap: int = 16
    seed: int = 12

    def __post_init__(self) -> None:
        if self.sample_size < 1:
            raise ValueError("sample_size must be >= 1")
        if self.max_chunk_len < 3:
            raise ValueError("max_chunk_len must fit CLS + 1 body token + SEP")
        if not 0 <= self.overlap < self.body_capacity:
            raise ValueError("overlap must be smaller than the window body")

    @property
    def body_capacity(self) -> int:
        return self.max_chunk_len - 2

    @property
    def step(self) -> int:
        return self.body_capacity - self.overlap


@dataclass(frozen=True)
class EncodedChunk:
    """One tokenized window: CLS + body + SEP, plus its ordinal in the doc."""

    token_ids: tuple[int, ...]
    doc_position: int

    def __post_init__(self) -> None:
        if len(self.token_ids) < 3:
            raise ValueError("chunk needs CLS, at least one body token, and SEP")
        if self.token_ids[0] != CLS_ID or self.token_ids[-1] != SEP_ID:
            raise ValueError("chunk must start with CLS and end with SEP")

    def __len__(self) -> int:
        return len(self.token_ids)


@dataclass(frozen=True)
class FeatureVector:
    """Log-scaled length features in canonical (nc, np, app) order."""

    names: tuple[str, ...]
    values: tuple[float, ...]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class ChunkSample:
    """Order-preserving random subset of a document's chunks."""

    chunks: tuple[EncodedChunk, ...]
    features: FeatureVector | None = None
    label: int | None = None

    def __post_init__(self) -> None:
        positions = [c.doc_position for c in self.chunks]
        if any(b <= a for a, b in zip(positions, positions[1:])):
            raise ValueError("chunks must be strictly increasing in doc_position")

    def __len__(self) -> int:
        return len(self.chunks)


def encode_document(
    doc: Document, vocab: Vocabulary, config: SamplerConfig = SamplerConfig()
) -> list[EncodedChunk]:
    """Encode each paragraph and wrap in CLS/SEP; paragraphs longer than the
    body capacity are sub-split into overlapping windows.

    Windows advance by ``body_capacity - overlap`` tokens, so consecutive
    windows of one paragraph share exactly ``overlap`` body tokens and the
    last window may be shorter. Chunks are numbered consecutively across
    paragraphs in document order; paragraphs encoding to zero tokens are
    skipped.
    """
    body = config.body_capacity
    chunks: list[EncodedChunk] = []
    position = 0
    for paragraph in doc.paragraphs:
        ids = encode(paragraph, vocab)
        if not ids:
            continue
        start = 0
        while True:
            window = ids[start : start + body]
            chunks.append(
                EncodedChunk(
                    token_ids=(CLS_ID, *window, SEP_ID),
                    doc_position=position,
                )
            )
            position += 1
            if start + body >= len(ids):
                break
            start += config.step
    return chunks


def sample_chunks(
    chunks: Sequence[EncodedChunk],
    config: SamplerConfig,
    rng: np.random.Generator,
    features: FeatureVector | None = None,
    label: int | None = None,
) -> ChunkSample:
    """Uniform sample without replacement of ``min(sample_size, len(chunks))``
    chunks, reordered by document position."""
    if not chunks:
        raise EmptyDocumentError("document yielded no chunks")
    k = min(config.sample_size, len(chunks))
    if k == len(chunks):
        picked = list(range(len(chunks)))
    else:
        picked = sorted(rng.choice(len(chunks), size=k, replace=False).tolist())
    return ChunkSample(
        chunks=tuple(chunks[i] for i in picked),
        features=features,
        label=label,
    )


def length_features(doc: Document, selected: Sequence[str] = FEATURE_NAMES) -> FeatureVector:
    """Natural-log length features; ``app`` is character count / 1800.

    Values are ln(max(raw, 1)) so degenerate documents stay finite. An empty
    selection yields an empty vector (the feature-free model configuration).
    """
    unknown = set(selected) - set(FEATURE_NAMES)
    if unknown:
        raise ValueError(f"unknown features: {sorted(unknown)}")
    raw = {
        "nc": float(doc.char_count),
        "np": float(doc.paragraph_count),
        "app": doc.char_count / CHARS_PER_PAGE,
    }
    names = tuple(name for name in FEATURE_NAMES if name in set(selected))
    values = tuple(math.log(max(raw[name], 1.0)) for name in names)
    return FeatureVector(names=names, values=values)

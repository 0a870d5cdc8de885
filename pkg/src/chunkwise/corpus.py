"""Corpus ingestion: JSONL loading, document validation, HTML paragraph
extraction, stratified splitting, per-class statistics, and a synthetic
corpus generator for desk-scale experiments.
"""

from __future__ import annotations

import html
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Document",
    "ValidationFailure",
    "JsonlRecord",
    "JsonlError",
    "SplitSpec",
    "ClassStats",
    "CorpusStats",
    "extract_paragraphs",
    "load_jsonl",
    "validate_document",
    "document_to_record",
    "document_to_json_line",
    "load_corpus",
    "save_corpus",
    "split_corpus",
    "quartiles",
    "corpus_stats",
    "stats_table",
    "generate_corpus",
    "write_document_files",
]


@dataclass(frozen=True)
class Document:
    """One document: unique id, ordered non-empty paragraphs, optional label."""

    id: str
    paragraphs: tuple[str, ...]
    language: str = ""
    label: str | None = None

    @property
    def char_count(self) -> int:
        return sum(len(p) for p in self.paragraphs)

    @property
    def paragraph_count(self) -> int:
        return len(self.paragraphs)


@dataclass(frozen=True)
class ValidationFailure:
    """A rejected raw record. A value, not an exception: pipelines treat it
    as a non-retryable per-document failure."""

    rule: str
    message: str
    record_id: str | None = None


@dataclass(frozen=True)
class JsonlRecord:
    line_no: int
    value: dict


@dataclass(frozen=True)
class JsonlError:
    line_no: int
    message: str


# ---------------------------------------------------------------------------
# HTML paragraph extraction

_EXTRACTED_TAGS = ("p", "li")


def _tag_name(tag_body: str) -> tuple[str, bool]:
    """Name and is-closing flag for the inside of a ``<...>`` span."""
    body = tag_body.strip()
    closing = body.startswith("/")
    if closing:
        body = body[1:]
    name = ""
    for ch in body:
        if ch.isalnum():
            name += ch.lower()
        else:
            break
    return name, closing


def extract_paragraphs(markup: str) -> list[str]:
    """Return the inner text of each ``<p>`` and ``<li>`` element in document
    order, with tags stripped, entities decoded, and whitespace normalized.

    Unbalanced or interleaved tags get best-effort treatment: an opening
    ``<p>``/``<li>`` while one is already being captured flushes the current
    capture, and end-of-input flushes whatever remains. Never raises on
    malformed markup.
    """
    paragraphs: list[str] = []
    capture: list[str] | None = None

    def flush() -> None:
        nonlocal capture
        if capture is not None:
            text = " ".join(html.unescape("".join(capture)).split())
            if text:
                paragraphs.append(text)
        capture = None

    i = 0
    n = len(markup)
    while i < n:
        ch = markup[i]
        if ch == "<":
            end = markup.find(">", i + 1)
            if end == -1:
                # dangling '<': treat the remainder as text
                if capture is not None:
                    capture.append(markup[i:])
                break
            name, closing = _tag_name(markup[i + 1 : end])
            if name in _EXTRACTED_TAGS:
                if closing:
                    flush()
                else:
                    flush()
                    capture = []
            # all other tags are stripped
            i = end + 1
        else:
            nxt = markup.find("<", i)
            if nxt == -1:
                nxt = n
            if capture is not None:
                capture.append(markup[i:nxt])
            i = nxt
    flush()
    return paragraphs


# ---------------------------------------------------------------------------
# JSONL I/O

def load_jsonl(path: str | Path) -> tuple[list[JsonlRecord], list[JsonlError]]:
    """Parse one JSON object per non-blank line.

    Malformed lines become line-tagged errors instead of aborting the rest.
    Raises ``OSError`` only if the file itself cannot be read.
    """
    records: list[JsonlRecord] = []
    errors: list[JsonlError] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                value = json.loads(line)
            except json.JSONDecodeError as exc:
                errors.append(JsonlError(line_no, str(exc)))
                continue
            if not isinstance(value, dict):
                errors.append(JsonlError(line_no, "line is not a JSON object"))
                continue
            records.append(JsonlRecord(line_no, value))
    return records, errors


def validate_document(record: dict) -> Document | ValidationFailure:
    """Check a raw record against the document schema.

    Required: ``id`` (string) and exactly one of ``paragraphs`` (array of
    strings) or ``html`` (string). Paragraphs must be non-empty after
    whitespace trimming (HTML sources are extracted first).
    """
    record_id = record.get("id") if isinstance(record.get("id"), str) else None
    if "id" not in record:
        return ValidationFailure("missing-id", "missing id")
    if not isinstance(record["id"], str) or not record["id"].strip():
        return ValidationFailure("bad-id", "id must be a non-empty string")

    has_paragraphs = "paragraphs" in record
    has_html = "html" in record
    if has_paragraphs and has_html:
        return ValidationFailure(
            "ambiguous-source", "record has both paragraphs and html", record_id
        )
    if not has_paragraphs and not has_html:
        return ValidationFailure(
            "missing-paragraphs", "record has neither paragraphs nor html", record_id
        )

    if has_html:
        if not isinstance(record["html"], str):
            return ValidationFailure("bad-html", "html must be a string", record_id)
        paragraphs = extract_paragraphs(record["html"])
    else:
        raw = record["paragraphs"]
        if not isinstance(raw, list) or any(not isinstance(p, str) for p in raw):
            return ValidationFailure(
                "bad-paragraphs", "paragraphs must be an array of strings", record_id
            )
        # keep paragraph text verbatim; drop whitespace-only entries
        paragraphs = [p for p in raw if p.strip()]

    if not paragraphs:
        return ValidationFailure("empty-paragraphs", "empty paragraphs", record_id)

    language = record.get("language", "")
    if not isinstance(language, str):
        return ValidationFailure("bad-language", "language must be a string", record_id)
    label = record.get("label")
    if label is not None and not isinstance(label, str):
        return ValidationFailure("bad-label", "label must be a string", record_id)

    return Document(
        id=record["id"],
        paragraphs=tuple(paragraphs),
        language=language,
        label=label,
    )


def document_to_record(doc: Document) -> dict:
    """Canonical JSON-able record: key order id, language, label, paragraphs."""
    record: dict = {"id": doc.id, "language": doc.language}
    if doc.label is not None:
        record["label"] = doc.label
    record["paragraphs"] = list(doc.paragraphs)
    return record


def document_to_json_line(doc: Document) -> str:
    return json.dumps(document_to_record(doc), ensure_ascii=False, separators=(",", ":"))


def load_corpus(path: str | Path) -> tuple[list[Document], list[JsonlError | ValidationFailure]]:
    """Load + validate a JSONL corpus file, keeping per-record failures."""
    records, errors = load_jsonl(path)
    problems: list[JsonlError | ValidationFailure] = list(errors)
    docs: list[Document] = []
    seen: set[str] = set()
    for rec in records:
        result = validate_document(rec.value)
        if isinstance(result, ValidationFailure):
            problems.append(result)
            continue
        if result.id in seen:
            problems.append(
                ValidationFailure("duplicate-id", f"duplicate id {result.id!r}", result.id)
            )
            continue
        seen.add(result.id)
        docs.append(result)
    return docs, problems


def save_corpus(docs: Iterable[Document], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(document_to_json_line(doc) + "\n")


# ---------------------------------------------------------------------------
# Splitting

@dataclass(frozen=True)
class SplitSpec:
    """Train/dev/test ratios (must sum to 1) and the shuffle seed."""

    train: float = 0.8
    dev: float = 0.1
    test: float = 0.1
    seed: int = 12

    def __post_init__(self) -> None:
        for name, ratio in (("train", self.train), ("dev", self.dev), ("test", self.test)):
            if not 0.0 < ratio < 1.0:
                raise ValueError(f"{name} ratio must be in (0,1), got {ratio}")
        if abs(self.train + self.dev + self.test - 1.0) > 1e-9:
            raise ValueError("split ratios must sum to 1")


def split_corpus(
    corpus: Sequence[Document], spec: SplitSpec
) -> tuple[list[Document], list[Document], list[Document]]:
    """Deterministic, class-stratified partition into (train, dev, test).

    Dev and test sizes are ``floor(ratio * n)`` per stratum; train takes the
    remainder. Classes with fewer than 3 documents are pooled and split
    together rather than per class.
    """
    if len(corpus) < 3:
        raise ValueError("corpus must have at least 3 documents to split")
    rng = np.random.default_rng(spec.seed)

    by_class: dict[str, list[Document]] = {}
    for doc in sorted(corpus, key=lambda d: d.id):
        by_class.setdefault(doc.label or "", []).append(doc)

    strata: list[list[Document]] = []
    pooled: list[Document] = []
    for label in sorted(by_class):
        docs = by_class[label]
        if len(docs) < 3:
            pooled.extend(docs)
        else:
            strata.append(docs)
    if pooled:
        strata.append(sorted(pooled, key=lambda d: d.id))

    train: list[Document] = []
    dev: list[Document] = []
    test: list[Document] = []
    for docs in strata:
        order = rng.permutation(len(docs))
        shuffled = [docs[i] for i in order]
        n_dev = int(spec.dev * len(docs))
        n_test = int(spec.test * len(docs))
        dev.extend(shuffled[:n_dev])
        test.extend(shuffled[n_dev : n_dev + n_test])
        train.extend(shuffled[n_dev + n_test :])
    return train, dev, test


# ---------------------------------------------------------------------------
# Statistics

def quartiles(values: Sequence[float]) -> tuple[float, float, float]:
    """Q1, Q2, Q3 by linear interpolation between closest ranks."""
    if len(values) == 0:
        raise ValueError("quartiles of empty sequence")
    q1, q2, q3 = np.quantile(np.asarray(values, dtype=float), [0.25, 0.5, 0.75])
    return float(q1), float(q2), float(q3)


@dataclass(frozen=True)
class ClassStats:
    label: str
    n_docs: int
    char_quartiles: tuple[float, float, float]
    paragraph_quartiles: tuple[float, float, float]


@dataclass(frozen=True)
class CorpusStats:
    per_class: tuple[ClassStats, ...]
    total: ClassStats

    def to_json_dict(self) -> dict:
        def row(s: ClassStats) -> dict:
            return {
                "label": s.label,
                "docs": s.n_docs,
                "char_quartiles": list(s.char_quartiles),
                "paragraph_quartiles": list(s.paragraph_quartiles),
            }

        return {"classes": [row(s) for s in self.per_class], "total": row(self.total)}


def corpus_stats(corpus: Sequence[Document]) -> CorpusStats:
    """Per-class document counts plus character- and paragraph-count quartiles.

    Character count is the sum of paragraph lengths. Classes with zero
    documents cannot occur (rows are derived from the corpus itself).
    """
    if not corpus:
        raise ValueError("corpus_stats of empty corpus")
    by_class: dict[str, list[Document]] = {}
    for doc in corpus:
        by_class.setdefault(doc.label or "", []).append(doc)

    rows = []
    for label in sorted(by_class):
        docs = by_class[label]
        rows.append(
            ClassStats(
                label=label,
                n_docs=len(docs),
                char_quartiles=quartiles([d.char_count for d in docs]),
                paragraph_quartiles=quartiles([d.paragraph_count for d in docs]),
            )
        )
    total = ClassStats(
        label="Total",
        n_docs=len(corpus),
        char_quartiles=quartiles([d.char_count for d in corpus]),
        paragraph_quartiles=quartiles([d.paragraph_count for d in corpus]),
    )
    return CorpusStats(per_class=tuple(rows), total=total)


def stats_table(stats: CorpusStats) -> str:
    """Aligned plain-text table: class, docs, character quartiles in
    thousands, paragraph quartiles."""
    header = (
        f"{'Class':<24}{'Docs':>8}"
        f"{'nc_Q1[k]':>10}{'nc_Q2[k]':>10}{'nc_Q3[k]':>10}"
        f"{'np_Q1':>8}{'np_Q2':>8}{'np_Q3':>8}"
    )
    lines = [header, "-" * len(header)]
    for row in list(stats.per_class) + [stats.total]:
        cq = [q / 1000.0 for q in row.char_quartiles]
        pq = row.paragraph_quartiles
        lines.append(
            f"{row.label:<24}{row.n_docs:>8}"
            f"{cq[0]:>10.1f}{cq[1]:>10.1f}{cq[2]:>10.1f}"
            f"{pq[0]:>8.0f}{pq[1]:>8.0f}{pq[2]:>8.0f}"
        )
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Synthetic corpus generator

_FILLER_WORDS = (
    "the of and to in a for on with as by at from this that is are was were "
    "be been shall may must any other such case party parties between under "
    "pursuant herein thereof whereas agreement section clause court claim "
    "claims respondent applicant state states date year present following"
).split()

_MARKERS_PER_CLASS = 3
_MARKER_PARAGRAPH_RATE = 0.45

# Paragraph-count ranges per class index, spaced so document length alone is
# a usable discriminator; later classes wrap around.
_PARAGRAPH_RANGES = ((4, 9), (12, 20), (28, 46), (64, 110), (10, 30), (40, 80))


def class_marker_tokens(class_index: int) -> list[str]:
    return [f"term{class_index}{suffix}" for suffix in "abc"[:_MARKERS_PER_CLASS]]


def generate_corpus(
    n_classes: int = 4,
    docs_per_class: int = 100,
    seed: int = 12,
    language: str = "en",
) -> list[Document]:
    """Synthetic labeled corpus: each class has its own marker tokens injected
    at a class-specific rate and its own paragraph-count range."""
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    rng = np.random.default_rng(seed)
    docs: list[Document] = []
    for k in range(n_classes):
        markers = class_marker_tokens(k)
        lo, hi = _PARAGRAPH_RANGES[k % len(_PARAGRAPH_RANGES)]
        for i in range(docs_per_class):
            n_paragraphs = int(rng.integers(lo, hi + 1))
            paragraphs = []
            for _ in range(n_paragraphs):
                n_words = int(rng.integers(6, 15))
                words = [_FILLER_WORDS[j] for j in rng.integers(0, len(_FILLER_WORDS), n_words)]
                if rng.random() < _MARKER_PARAGRAPH_RATE:
                    for _ in range(int(rng.integers(1, 3))):
                        pos = int(rng.integers(0, len(words) + 1))
                        words.insert(pos, markers[int(rng.integers(0, len(markers)))])
                paragraphs.append(" ".join(words))
            docs.append(
                Document(
                    id=f"doc-{k}-{i:04d}",
                    paragraphs=tuple(paragraphs),
                    language=language,
                    label=f"class{k}",
                )
            )
    return docs


def write_document_files(docs: Iterable[Document], directory: str | Path) -> list[Path]:
    """One JSON file per document (the pipeline's input layout)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for doc in docs:
        path = directory / f"{doc.id}.json"
        path.write_text(document_to_json_line(doc) + "\n", encoding="utf-8")
        paths.append(path)
    return paths

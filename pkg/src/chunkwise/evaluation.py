"""Weighted and per-class F-scores plus the resampled multi-run evaluation
protocol that reports score distributions as min/Q1/Q2/Q3/max.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .chunking import SamplerConfig, length_features, sample_chunks
from .corpus import Document, quartiles
from .model import ModelParams, classify
from . import chunking
from .tokenizer import Vocabulary

__all__ = [
    "ConfusionMatrix",
    "ScoreDistribution",
    "EvalResult",
    "per_class_f",
    "weighted_f",
    "predict_label",
    "evaluate_runs",
    "distribution_table",
    "per_class_table",
]


class ConfusionMatrix:
    """Counts indexed [true class, predicted class] over a fixed label set."""

    def __init__(self, labels: Sequence[str], counts: np.ndarray | None = None):
        self.labels = tuple(labels)
        n = len(self.labels)
        self.counts = (
            np.zeros((n, n), dtype=np.int64) if counts is None else np.asarray(counts)
        )
        if self.counts.shape != (n, n):
            raise ValueError("counts shape must be (n_labels, n_labels)")
        if (self.counts < 0).any():
            raise ValueError("counts must be non-negative")
        self._index = {label: i for i, label in enumerate(self.labels)}

    @classmethod
    def from_pairs(
        cls,
        y_true: Sequence[str],
        y_pred: Sequence[str],
        labels: Sequence[str] | None = None,
    ) -> "ConfusionMatrix":
        if len(y_true) != len(y_pred):
            raise ValueError("y_true and y_pred must have equal length")
        if labels is None:
            labels = sorted(set(y_true) | set(y_pred))
        cm = cls(labels)
        for t, p in zip(y_true, y_pred):
            cm.add(t, p)
        return cm

    def add(self, true_label: str, predicted_label: str) -> None:
        self.counts[self._index[true_label], self._index[predicted_label]] += 1

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def support(self, label: str) -> int:
        return int(self.counts[self._index[label]].sum())


def per_class_f(cm: ConfusionMatrix) -> dict[str, float]:
    """F1 per class; 0 by convention when precision + recall = 0."""
    scores: dict[str, float] = {}
    for i, label in enumerate(cm.labels):
        tp = float(cm.counts[i, i])
        fp = float(cm.counts[:, i].sum() - tp)
        fn = float(cm.counts[i, :].sum() - tp)
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        scores[label] = (
            2.0 * precision * recall / (precision + recall)
            if precision + recall > 0
            else 0.0
        )
    return scores


def weighted_f(cm: ConfusionMatrix) -> float:
    """Support-weighted mean of per-class F1 (weights = true-class counts)."""
    total = cm.total
    if total == 0:
        raise ValueError("confusion matrix is empty")
    f_scores = per_class_f(cm)
    return sum(cm.support(label) * f_scores[label] for label in cm.labels) / total


@dataclass(frozen=True)
class ScoreDistribution:
    """Per-run scores with quartile summary (same interpolation convention as
    the corpus statistics)."""

    scores: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.scores:
            raise ValueError("distribution needs at least one score")

    @property
    def min(self) -> float:
        return min(self.scores)

    @property
    def max(self) -> float:
        return max(self.scores)

    @property
    def q1(self) -> float:
        return quartiles(self.scores)[0]

    @property
    def q2(self) -> float:
        return quartiles(self.scores)[1]

    @property
    def q3(self) -> float:
        return quartiles(self.scores)[2]

    def summary(self) -> dict[str, float]:
        q1, q2, q3 = quartiles(self.scores)
        return {"min": self.min, "q1": q1, "q2": q2, "q3": q3, "max": self.max}


@dataclass
class EvalResult:
    distribution: ScoreDistribution
    per_class_median: dict[str, float]
    supports: dict[str, int]
    n_runs: int
    base_seed: int

    def to_json_dict(self) -> dict:
        return {
            "n_runs": self.n_runs,
            "base_seed": self.base_seed,
            "weighted_f": {
                **self.distribution.summary(),
                "scores": list(self.distribution.scores),
            },
            "per_class_median_f": dict(self.per_class_median),
            "supports": dict(self.supports),
        }


def predict_label(
    doc: Document,
    params: ModelParams,
    vocab: Vocabulary,
    sampler: SamplerConfig,
    class_names: Sequence[str],
    rng: np.random.Generator,
) -> str:
    """Encode, sample, classify: the argmax class for one document."""
    chunks = chunking.encode_document(doc, vocab, sampler)
    feats = length_features(doc, params.config.feature_names)
    sample = sample_chunks(chunks, sampler, rng, features=feats)
    probs, _ = classify(sample, params, mode="eval")
    return class_names[int(np.argmax(probs))]


def evaluate_runs(
    params: ModelParams,
    vocab: Vocabulary,
    corpus: Sequence[Document],
    sampler: SamplerConfig,
    class_names: Sequence[str],
    n_runs: int = 30,
    base_seed: int = 12,
) -> EvalResult:
    """Repeat the whole-corpus evaluation ``n_runs`` times, resampling every
    document's chunks with seed ``base_seed + run``; aggregates the weighted
    F-score distribution and median per-class F across runs."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    docs = sorted(corpus, key=lambda d: d.id)
    for doc in docs:
        if doc.label is None:
            raise ValueError(f"document {doc.id!r} is unlabeled")

    run_scores: list[float] = []
    per_class_runs: dict[str, list[float]] = {label: [] for label in class_names}
    supports: dict[str, int] = {label: 0 for label in class_names}
    for run in range(n_runs):
        rng = np.random.default_rng(base_seed + run)
        y_true = []
        y_pred = []
        for doc in docs:
            y_true.append(doc.label)
            y_pred.append(predict_label(doc, params, vocab, sampler, class_names, rng))
        cm = ConfusionMatrix.from_pairs(y_true, y_pred, labels=class_names)
        run_scores.append(weighted_f(cm))
        for label, score in per_class_f(cm).items():
            per_class_runs[label].append(score)
        if run == 0:
            supports = {label: cm.support(label) for label in class_names}

    per_class_median = {
        label: float(np.median(scores)) for label, scores in per_class_runs.items()
    }
    return EvalResult(
        distribution=ScoreDistribution(tuple(run_scores)),
        per_class_median=per_class_median,
        supports=supports,
        n_runs=n_runs,
        base_seed=base_seed,
    )


def distribution_table(rows: Sequence[tuple[str, float | None, ScoreDistribution]]) -> str:
    """Text table with one row per configuration: dev score (if any) plus the
    test-score distribution columns Min/Q1/Q2/Q3/Max."""
    header = (
        f"{'Configuration':<24}{'Dev':>8}"
        f"{'Min':>8}{'Q1':>8}{'Q2':>8}{'Q3':>8}{'Max':>8}"
    )
    lines = [header, "-" * len(header)]
    for name, dev, dist in rows:
        s = dist.summary()
        dev_txt = f"{dev:.3f}" if dev is not None else "-"
        lines.append(
            f"{name:<24}{dev_txt:>8}"
            f"{s['min']:>8.3f}{s['q1']:>8.3f}{s['q2']:>8.3f}{s['q3']:>8.3f}{s['max']:>8.3f}"
        )
    return "\n".join(lines)


def per_class_table(per_class_median: Mapping[str, float], supports: Mapping[str, int]) -> str:
    """Text table: median F-score and document count per class."""
    header = f"{'Class':<24}{'Median F':>10}{'Docs':>8}"
    lines = [header, "-" * len(header)]
    for label in sorted(per_class_median):
        lines.append(
            f"{label:<24}{per_class_median[label]:>10.3f}{supports.get(label, 0):>8}"
        )
    return "\n".join(lines)
